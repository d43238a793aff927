//! The `train`, `interpret` and `metrics` commands.

use std::fs;
use std::path::{Path, PathBuf};

use flint_core::data::Dataset;
use flint_core::interpretation::{global_relevance, global_set, local_relevances, local_set};
use flint_core::metrics::{
    conciseness_curve, disagreement_report, shuffle_attribute_test, top_k_fidelity, DisagreementOptions,
};
use flint_core::models::{argmax_rows, ModelBundle};
use flint_core::nn::Owner;
use flint_core::training::{evaluate, train, EvalReport, Mode, TrainReport};
use flint_core::visualization::{am_pi, select_mas, AmpiResult};
use ndarray::{Array2, Array3, Axis};
use serde_json::{json, Map, Value};

use crate::checkpoint::{self, Checkpoint, FORMAT_VERSION};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{csv_field, with_provenance, write_csv, write_grid, write_heatmap, write_jsonl, write_text, Scale};

/// Fields embedded in every record and sidecar.
pub fn provenance(config: &RunConfig) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("config_digest".into(), json!(config.digest()));
    m.insert("seed".into(), json!(config.seed));
    m.insert("format_version".into(), json!(FORMAT_VERSION));
    m
}

fn provenance_line(config: &RunConfig) -> String {
    format!(
        "# config_digest={} seed={} format_version={FORMAT_VERSION}\n",
        config.digest(),
        config.seed
    )
}

fn record(fields: Value, config: &RunConfig) -> Value {
    match fields {
        Value::Object(m) => with_provenance(m, &provenance(config)),
        other => other,
    }
}

fn prepare_dir(dir: &Path) -> CliResult<PathBuf> {
    fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}

fn check_shape(bundle: &ModelBundle, data: &Dataset) -> CliResult<()> {
    if bundle.input_shape() != data.image_shape() {
        return Err(CliError::Config(format!(
            "model expects {:?} inputs, dataset has {:?}",
            bundle.input_shape(),
            data.image_shape()
        )));
    }
    if bundle.classes() != data.classes() {
        return Err(CliError::Config(format!(
            "model has {} classes, dataset has {}",
            bundle.classes(),
            data.classes()
        )));
    }
    Ok(())
}

/// A bundle with the checkpoint's predictor and freshly initialized interpreter.
fn bundle_for_posthoc(config: &RunConfig, classes: usize) -> CliResult<ModelBundle> {
    let path = config.predictor_checkpoint.as_ref().expect("validated");
    let source = Checkpoint::load(path)?;
    let spec = config.bundle_spec(classes)?;
    if source.bundle.spec().predictor != spec.predictor {
        return Err(CliError::Config(format!(
            "predictor in {} does not match model.preset {}",
            path.display(),
            config.preset
        )));
    }
    let mut bundle = ModelBundle::build(spec, config.seed)?;
    for (dst, src) in bundle
        .params_mut()
        .tensors_mut()
        .iter_mut()
        .zip(source.bundle.params().tensors())
        .filter(|(d, _)| d.owner == Owner::Predictor)
    {
        dst.values.clone_from(&src.values);
    }
    Ok(bundle)
}

fn eval_json(e: &Option<EvalReport>) -> Value {
    match e {
        Some(e) => json!({
            "samples": e.samples,
            "accuracy_f": e.accuracy_f,
            "accuracy_g": e.accuracy_g,
            "fidelity": e.fidelity,
        }),
        None => Value::Null,
    }
}

fn summary_table(report: &TrainReport) -> String {
    let mut out = format!(
        "{:>5} {:>5} {:>5} {:>5} {:>7} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
        "epoch", "pred", "of", "cd", "steps", "L_pred", "L_of", "L_cd", "L_if", "total"
    );
    let flag = |b: bool| if b { "on" } else { "-" };
    for e in &report.epochs {
        out.push_str(&format!(
            "{:>5} {:>5} {:>5} {:>5} {:>7} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.5}\n",
            e.epoch,
            flag(e.mask.pred),
            flag(e.mask.of),
            flag(e.mask.cd),
            e.steps,
            e.loss.pred,
            e.loss.of,
            e.loss.cd,
            e.loss.if_,
            e.loss.total
        ));
    }
    for (name, eval) in [("train", &report.train), ("test", &report.test)] {
        if let Some(e) = eval {
            out.push_str(&format!(
                "{name}: accuracy(f) {:.4}  accuracy(g) {:.4}  fidelity {:.4}  ({} samples)\n",
                e.accuracy_f, e.accuracy_g, e.fidelity, e.samples
            ));
        }
    }
    out
}

pub fn cmd_train(config: &RunConfig, out: &Path) -> CliResult<String> {
    let (train_set, test_set) = config.load_data()?;
    let bundle = match config.train.mode {
        Mode::Joint => ModelBundle::build(config.bundle_spec(train_set.classes())?, config.seed)?,
        Mode::Posthoc => bundle_for_posthoc(config, train_set.classes())?,
    };
    check_shape(&bundle, &train_set)?;
    let (trained, report) = train(&bundle, &train_set, Some(&test_set), &config.train)?;

    let dir = prepare_dir(out)?;
    let canonical = config.canonical();
    Checkpoint {
        bundle: trained,
        class_names: train_set.class_names.clone(),
        epoch: report.epochs.len(),
        config: canonical.clone(),
        config_digest: config.digest(),
    }
    .save(&dir.join(checkpoint::FILE_NAME))?;

    let mut records: Vec<Value> = report
        .epochs
        .iter()
        .map(|e| {
            record(
                json!({"record": "epoch", "epoch": e.epoch, "mask": e.mask, "steps": e.steps, "loss": e.loss}),
                config,
            )
        })
        .collect();
    records.push(record(
        json!({
            "record": "summary",
            "mode": report.mode,
            "batch_size": report.batch_size,
            "steps": report.steps,
            "train": eval_json(&report.train),
            "test": eval_json(&report.test),
            "fidelity": report.test.as_ref().map(|e| e.fidelity),
            "param_digest": report.checksum,
        }),
        config,
    ));
    write_jsonl(&dir.join("train.jsonl"), &records)?;
    write_text(&dir.join("config.txt"), &(provenance_line(config) + &canonical))?;
    let table = summary_table(&report);
    write_text(&dir.join("summary.txt"), &(provenance_line(config) + &table))?;
    Ok(format!("{table}parameter digest {}\noutput {}\n", report.checksum, dir.display()))
}

/// Config for a checkpoint command: the given file, or the one the checkpoint echoes.
pub fn config_for_checkpoint(ckpt: &Checkpoint, path: Option<&Path>, overrides: &[String]) -> CliResult<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p, overrides),
        None => RunConfig::parse_with_overrides(&ckpt.config, Path::new("."), overrides),
    }
}

fn load_for(config: &RunConfig, ckpt: &Checkpoint) -> CliResult<(Dataset, Dataset)> {
    let (train_set, test_set) = config.load_data()?;
    check_shape(&ckpt.bundle, &train_set)?;
    if train_set.class_names != ckpt.class_names {
        return Err(CliError::Data("dataset class names differ from the checkpoint's".into()));
    }
    Ok((train_set, test_set))
}

/// Grayscale view of a `(C, H, W)` image: the channel mean.
fn gray(x: &Array3<f64>) -> Array2<f64> {
    x.mean_axis(Axis(0)).unwrap()
}

fn unit_scale() -> Scale {
    Scale { lo: 0.0, hi: 1.0 }
}

fn ampi_json(r: &AmpiResult) -> Value {
    json!({
        "source": r.source,
        "initial_activation": r.initial_activation,
        "final_activation": r.final_activation,
        "initial_objective": r.initial_objective,
        "final_objective": r.final_objective,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum InterpretTarget {
    Global,
    Local(Vec<usize>),
}

pub fn cmd_interpret(ckpt: &Checkpoint, config: &RunConfig, target: &InterpretTarget, out: &Path) -> CliResult<String> {
    let (train_set, test_set) = load_for(config, ckpt)?;
    let dir = prepare_dir(out)?;
    match target {
        InterpretTarget::Global => interpret_global(&ckpt.bundle, config, &train_set, &dir),
        InterpretTarget::Local(ids) => interpret_local(&ckpt.bundle, config, &test_set, ids, &dir),
    }
}

fn interpret_global(bundle: &ModelBundle, config: &RunConfig, data: &Dataset, dir: &Path) -> CliResult<String> {
    let m = global_relevance(bundle, &data.images)?;
    let prov = provenance_line(config);
    let names: Vec<String> = data.class_names.iter().map(|n| csv_field(n)).collect();
    let header: Vec<String> = std::iter::once("attribute".to_string()).chain(names).collect();
    let rows: Vec<Vec<String>> = (0..m.attributes())
        .map(|j| {
            std::iter::once(j.to_string())
                .chain((0..m.classes()).map(|c| m.r[[j, c]].to_string()))
                .collect()
        })
        .collect();
    write_csv(&dir.join("relevance.csv"), &prov, &header, &rows)?;
    write_heatmap(&dir.join("relevance.png"), &m.r)?;
    write_text(
        &dir.join("relevance.txt"),
        &format!(
            "{prov}rows: attributes 0..{}; columns: classes {}\ncolor: blue -1, white 0, red +1\nsupport per class: {:?}\n",
            m.attributes(),
            data.class_names.join(", "),
            m.support
        ),
    )?;

    let pairs = global_set(&m, config.metrics.threshold)?;
    let mut records = Vec::new();
    let mut summary = format!(
        "global relevance over {} samples, threshold {}\n",
        data.len(),
        config.metrics.threshold
    );
    if pairs.is_empty() {
        records.push(record(
            json!({"record": "empty", "message": "no pairs above threshold", "threshold": config.metrics.threshold}),
            config,
        ));
        summary.push_str("no pairs above threshold\n");
    }
    for (c, j) in pairs {
        let size = config.metrics.mas_size.min(data.indices_of_class(c).len());
        let mas = select_mas(bundle, data, c, j, size)?;
        let images: Vec<Array3<f64>> = mas.samples.iter().map(|&(id, _)| data.image(id)).collect();
        let vis: Vec<AmpiResult> = mas
            .samples
            .iter()
            .zip(&images)
            .map(|(&(id, _), x)| am_pi(bundle, x, id, j, &config.ampi))
            .collect::<Result<_, _>>()?;
        let top: Vec<Array2<f64>> = images.iter().map(gray).collect();
        let bottom: Vec<Array2<f64>> = vis.iter().map(|v| gray(&v.x_vis)).collect();
        let scales: Vec<Scale> = bottom.iter().map(|b| Scale::min_max(b.view())).collect();
        let name = format!("class{c}_attr{j}");
        write_grid(
            &dir.join(format!("{name}.png")),
            &[
                top.iter().map(|t| (t.view(), unit_scale())).collect(),
                bottom.iter().zip(&scales).map(|(b, s)| (b.view(), *s)).collect(),
            ],
        )?;
        let mut side = format!(
            "{prov}class {c} ({}) attribute {j} relevance {}\nrow 1: maximum-activation samples, gray = value in [0, 1]\nrow 2: AM+PI outputs, gray = (v - lo) / (hi - lo)\n",
            data.class_names[c],
            m.r[[j, c]]
        );
        for (((id, act), v), s) in mas.samples.iter().zip(&vis).zip(&scales) {
            side.push_str(&format!(
                "sample {id}: activation {act}, AM+PI activation {} -> {}, lo {} hi {}\n",
                v.initial_activation, v.final_activation, s.lo, s.hi
            ));
        }
        write_text(&dir.join(format!("{name}.txt")), &side)?;
        records.push(record(
            json!({
                "record": "pair",
                "class": c,
                "class_name": data.class_names[c],
                "attribute": j,
                "relevance": m.r[[j, c]],
                "mas": mas.samples,
                "ampi": vis.iter().map(ampi_json).collect::<Vec<_>>(),
                "image": format!("{name}.png"),
            }),
            config,
        ));
        summary.push_str(&format!("{name}.png  r = {:.4}\n", m.r[[j, c]]));
    }
    write_jsonl(&dir.join("interpret_global.jsonl"), &records)?;
    Ok(summary)
}

fn interpret_local(
    bundle: &ModelBundle,
    config: &RunConfig,
    data: &Dataset,
    ids: &[usize],
    dir: &Path,
) -> CliResult<String> {
    if ids.is_empty() {
        return Err(CliError::Config("local mode needs at least one sample id".into()));
    }
    if let Some(bad) = ids.iter().find(|&&i| i >= data.len()) {
        return Err(CliError::Config(format!(
            "sample id {bad} out of range for {} test samples",
            data.len()
        )));
    }
    let locals = local_relevances(bundle, &data.gather(ids), ids)?;
    let prov = provenance_line(config);
    let mut records = Vec::new();
    let mut summary = String::new();
    for l in &locals {
        let x = data.image(l.sample_id);
        let top = l.top(3);
        let vis: Vec<AmpiResult> = top
            .iter()
            .map(|&(j, _)| am_pi(bundle, &x, l.sample_id, j, &config.ampi))
            .collect::<Result<_, _>>()?;
        let input = gray(&x);
        let tiles: Vec<Array2<f64>> = vis.iter().map(|v| gray(&v.x_vis)).collect();
        let scales: Vec<Scale> = tiles.iter().map(|t| Scale::min_max(t.view())).collect();
        let row = std::iter::once((input.view(), unit_scale()))
            .chain(tiles.iter().zip(&scales).map(|(t, s)| (t.view(), *s)))
            .collect();
        let name = format!("local_sample{}", l.sample_id);
        write_grid(&dir.join(format!("{name}.png")), &[row])?;
        let class_name = &data.class_names[l.predicted_class];
        let mut side = format!(
            "{prov}sample {} label {} predicted {} ({class_name})\ntile 1: input, gray = value in [0, 1]\n",
            l.sample_id, data.labels[l.sample_id], l.predicted_class
        );
        summary.push_str(&format!("sample {} -> {class_name}:", l.sample_id));
        for (k, ((&(j, r), v), s)) in top.iter().zip(&vis).zip(&scales).enumerate() {
            side.push_str(&format!(
                "tile {}: attribute {j} r {r} AM+PI activation {} -> {}, lo {} hi {}\n",
                k + 2,
                v.initial_activation,
                v.final_activation,
                s.lo,
                s.hi
            ));
            summary.push_str(&format!("  attr {j} (r = {r:.3})"));
        }
        summary.push('\n');
        write_text(&dir.join(format!("{name}.txt")), &side)?;
        records.push(record(
            json!({
                "record": "local",
                "sample_id": l.sample_id,
                "label": data.labels[l.sample_id],
                "predicted_class": l.predicted_class,
                "alpha": l.alpha,
                "r": l.r,
                "top": top,
                "local_set": local_set(&l.r, config.metrics.threshold)?,
                "ampi": vis.iter().map(ampi_json).collect::<Vec<_>>(),
                "image": format!("{name}.png"),
            }),
            config,
        ));
    }
    write_jsonl(&dir.join("interpret_local.jsonl"), &records)?;
    Ok(summary)
}

pub fn cmd_metrics(ckpt: &Checkpoint, config: &RunConfig, out: &Path) -> CliResult<String> {
    let (train_set, test_set) = load_for(config, ckpt)?;
    let bundle = &ckpt.bundle;
    let mc = &config.metrics;
    let dir = prepare_dir(out)?;
    let prov = provenance_line(config);
    let mut records = Vec::new();
    let mut summary = String::new();
    let mut push = |metric: &str, value: Value, extra: Value, summary: &mut String| {
        summary.push_str(&format!("{metric:<24} {value}\n"));
        let mut m = Map::new();
        m.insert("metric".into(), json!(metric));
        m.insert("value".into(), value);
        if let Value::Object(e) = extra {
            m.extend(e);
        }
        records.push(with_provenance(m, &provenance(config)));
    };

    let eval = evaluate(bundle, &test_set)?;
    push("accuracy_f", json!(eval.accuracy_f), json!({}), &mut summary);
    push("accuracy_g", json!(eval.accuracy_g), json!({}), &mut summary);
    push("fidelity", json!(eval.fidelity), json!({}), &mut summary);

    let p = bundle.predict_chunked(&test_set.images, 256)?;
    let f_classes = argmax_rows(&p.f_probs);
    for k in 1..=mc.top_k_max.min(bundle.classes()) {
        let v = top_k_fidelity(&f_classes, &p.g_probs, k)?;
        push(&format!("top_{k}_fidelity"), json!(v), json!({"k": k}), &mut summary);
    }

    let ids: Vec<usize> = (0..test_set.len()).collect();
    let locals = local_relevances(bundle, &test_set.images, &ids)?;
    let rs: Vec<Vec<f64>> = locals.into_iter().map(|l| l.r).collect();
    let curve = conciseness_curve(&rs, &mc.conciseness_thresholds)?;
    for (t, v) in curve.thresholds.iter().zip(&curve.values) {
        push("conciseness", json!(v), json!({"threshold": t}), &mut summary);
    }
    write_csv(
        &dir.join("conciseness.csv"),
        &prov,
        &["threshold".into(), "value".into()],
        &curve
            .thresholds
            .iter()
            .zip(&curve.values)
            .map(|(t, v)| vec![t.to_string(), v.to_string()])
            .collect::<Vec<_>>(),
    )?;

    let shuffle = shuffle_attribute_test(bundle, &test_set, config.seed)?;
    push(
        "shuffle_drop",
        json!(shuffle.drop),
        json!({"accuracy": shuffle.accuracy, "shuffled_accuracy": shuffle.shuffled_accuracy}),
        &mut summary,
    );

    let opts = DisagreementOptions {
        k: mc.disagreement_k,
        reference_per_class: mc.reference_per_class,
        directions: mc.depth_directions,
        seed: config.seed,
    };
    let report = disagreement_report(bundle, &test_set, &train_set, &opts)?;
    push(
        "disagreements",
        json!(report.entries.len()),
        json!({
            "k": report.k,
            "samples": report.samples,
            "f_correct": report.correct_count(),
            "class_median_depth": report.class_median_depth,
            "direction_count": report.direction_count,
        }),
        &mut summary,
    );
    let rows: Vec<Vec<String>> = report
        .entries
        .iter()
        .map(|e| {
            vec![
                e.sample_id.to_string(),
                e.label.to_string(),
                e.f_class.to_string(),
                e.g_top.iter().map(usize::to_string).collect::<Vec<_>>().join(" "),
                e.f_correct.to_string(),
                e.depth.map(|d| d.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("disagreements.csv"),
        &prov,
        &["sample_id", "label", "f_class", "g_top", "f_correct", "depth"].map(String::from),
        &rows,
    )?;

    write_jsonl(&dir.join("metrics.jsonl"), &records)?;
    Ok(summary)
}

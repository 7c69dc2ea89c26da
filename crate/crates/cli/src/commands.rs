//! The four pipeline subcommands. Every output file is prefixed with the
//! resolved-config digest, so one directory can hold several runs and a
//! rerun of the same config overwrites its own files bit-identically.

use crate::config::{num_token, ExperimentConfig};
use crate::svg::{padded_range, Figure, PALETTE};
use rfmc::campaign::{
    file_digest, probability_of_failure, read_rfmc, run_campaign, split_train_test, write_rfmc,
    CampaignSpec, Dataset,
};
use rfmc::eval::{
    boxplot_stats, metrics, repeated_kfold, roc_auc, write_metrics_csv, ConfusionMatrix, MetricRow,
};
use rfmc::models::{
    train_bagging, train_dt, train_gnb, train_knn, train_lr, train_rf, train_stacking, train_svc,
    train_voting, FeatureMatrix, ModelKind, TrainedModel,
};
use rfmc::stability::StabilityLabel;
use rfmc::{Error, Real, Result};
use std::collections::BTreeMap;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Full-scale realization budget the timing table extrapolates to: twelve
/// datasets of 10,000 records.
const FULL_SCALE_TOTAL: Real = 120_000.0;
/// Full-scale records per dataset (five mean levels of 2,000).
const FULL_SCALE_PER_DATASET: Real = 10_000.0;

fn out_path(out: &Path, digest: &str, name: &str) -> PathBuf {
    out.join(format!("{digest}_{name}"))
}

fn dataset_file(out: &Path, digest: &str, name: &str) -> PathBuf {
    out_path(out, digest, &format!("{name}.rfmc"))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Reads a comma-separated table written by this pipeline (no quoting) and
/// checks its header. A missing file is reported by name.
fn read_table(path: &Path, header: &str) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("missing table {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == header => {}
        other => {
            return Err(Error::data(format!(
                "{}: expected header {header:?}, found {other:?}",
                path.display()
            )))
        }
    }
    Ok(lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

fn parse_real(s: &str, what: &str) -> Result<Real> {
    s.parse()
        .map_err(|_| Error::data(format!("bad {what} value {s:?}")))
}

// ---------------------------------------------------------------------------
// generate

pub fn run_generate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let digest = cfg.digest()?;
    cfg.write_resolved(out, &digest)?;

    let mut manifest = create(&out_path(out, &digest, "generate_manifest.csv"))?;
    writeln!(manifest, "dataset,file,records,pf,sha256")?;
    for spec in cfg.campaign_specs() {
        let name = ExperimentConfig::dataset_name(&spec);
        let t0 = Instant::now();
        let data = run_campaign(&spec)?;
        let pf = probability_of_failure(&data.labels());
        let path = dataset_file(out, &digest, &name);
        write_rfmc(&path, &data)?;
        let sha = file_digest(&path)?;
        let secs = t0.elapsed().as_secs_f64();
        println!(
            "dataset {name}: {} records, p_f {pf}, {secs:.2} s",
            data.len()
        );
        writeln!(
            manifest,
            "{name},{},{},{pf},{sha}",
            path.file_name().unwrap().to_string_lossy(),
            data.len()
        )?;
    }
    manifest.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train-eval

/// Trains one configured model kind. The master seed feeds every internal
/// random stream, so results are reproducible per (kind, data, config).
pub fn train_kind(
    cfg: &ExperimentConfig,
    kind: ModelKind,
    x: &[Vec<Real>],
    y: &[StabilityLabel],
) -> Result<TrainedModel> {
    let base = cfg.base_params();
    let seed = cfg.seed;
    match kind {
        ModelKind::Lr => train_lr(x, y, &base.lr),
        ModelKind::Knn => train_knn(x, y, &base.knn),
        ModelKind::Dt => train_dt(x, y, &base.dt),
        ModelKind::Svc => train_svc(x, y, &base.svc),
        ModelKind::Rf => train_rf(x, y, &base.rf, seed),
        ModelKind::Gnb => train_gnb(x, y, &base.gnb),
        ModelKind::Stack => train_stacking(x, y, &cfg.stack_params(), seed),
        ModelKind::Bag => train_bagging(x, y, &cfg.bag_params(), seed),
        ModelKind::Vote => train_voting(x, y, &cfg.vote_params(), seed),
    }
}

fn metric_row(
    dataset: &str,
    model: &str,
    repeat: usize,
    fold: usize,
    actual: &[StabilityLabel],
    predicted: &[StabilityLabel],
    scores: &[Real],
) -> Result<(MetricRow, ConfusionMatrix)> {
    let cm = ConfusionMatrix::from_labels(actual, predicted)?;
    let m = metrics::<Real>(&cm);
    // single-class fold tests have no defined AUC; recorded as NaN
    let auc = roc_auc(scores, actual).map(|r| r.auc).unwrap_or(Real::NAN);
    Ok((
        MetricRow {
            dataset: dataset.to_string(),
            model: model.to_string(),
            repeat,
            fold,
            accuracy: m.accuracy,
            f1: m.f1,
            auc,
            sensitivity: m.recall,
            specificity: m.specificity,
            fpr: m.fpr,
        },
        cm,
    ))
}

fn check_geometry(cfg: &ExperimentConfig, spec: &CampaignSpec, data: &Dataset) -> Result<()> {
    if data.spec.geometry != cfg.geometry || data.spec.search_step != cfg.search_step {
        return Err(Error::data(format!(
            "dataset {} was generated with a different geometry or search step",
            ExperimentConfig::dataset_name(spec)
        )));
    }
    Ok(())
}

pub fn run_train_eval(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let digest = cfg.digest()?;
    cfg.write_resolved(out, &digest)?;
    let kinds: Vec<ModelKind> = cfg
        .models
        .iter()
        .map(|m| crate::config::parse_kind(m))
        .collect::<Result<_>>()?;

    let mut rows_test = Vec::new();
    let mut rows_entire = Vec::new();
    let mut rows_cv = Vec::new();
    let mut confusion = create(&out_path(out, &digest, "confusion.csv"))?;
    writeln!(confusion, "dataset,model,scope,tn,fp,fn,tp")?;
    let mut pf_table = create(&out_path(out, &digest, "pf.csv"))?;
    writeln!(pf_table, "dataset,model,scope,n,pf_mc,pf_pred,abs_error")?;
    let mut roc_table = create(&out_path(out, &digest, "roc.csv"))?;
    writeln!(roc_table, "dataset,model,fpr,tpr")?;

    for spec in cfg.campaign_specs() {
        let name = ExperimentConfig::dataset_name(&spec);
        let data = read_rfmc(&dataset_file(out, &digest, &name))?;
        check_geometry(cfg, &spec, &data)?;
        let (train, test) = split_train_test(&data, &cfg.split_plan())?;
        let ftr = FeatureMatrix::from_dataset(&train);
        let fte = FeatureMatrix::from_dataset(&test);
        let fall = FeatureMatrix::from_dataset(&data);

        for &kind in &kinds {
            let model = train_kind(cfg, kind, &ftr.rows, &ftr.labels)?;
            for (scope, fm, rows_out) in [
                ("test", &fte, &mut rows_test),
                ("entire", &fall, &mut rows_entire),
            ] {
                let predicted = model.predict(&fm.rows)?;
                let scores = model.predict_score(&fm.rows)?;
                let (row, cm) =
                    metric_row(&name, kind.as_str(), 0, 0, &fm.labels, &predicted, &scores)?;
                writeln!(
                    confusion,
                    "{name},{},{scope},{},{},{},{}",
                    kind.as_str(),
                    cm.tn,
                    cm.fp,
                    cm.fn_,
                    cm.tp
                )?;
                let pf_mc = probability_of_failure(&fm.labels);
                let pf_pred = probability_of_failure(&predicted);
                writeln!(
                    pf_table,
                    "{name},{},{scope},{},{pf_mc},{pf_pred},{}",
                    kind.as_str(),
                    fm.labels.len(),
                    (pf_pred - pf_mc).abs()
                )?;
                if scope == "test" {
                    if let Ok(curve) = roc_auc(&scores, &fte.labels) {
                        for (fpr, tpr) in curve.points {
                            writeln!(roc_table, "{name},{},{fpr},{tpr}", kind.as_str())?;
                        }
                    }
                }
                rows_out.push(row);
            }
        }

        // repeated CV on the training pool
        let folds = repeated_kfold(ftr.rows.len(), cfg.cv.k, cfg.cv.repeats, cfg.seed)?;
        for &kind in &kinds {
            for fold in &folds {
                let fx: Vec<Vec<Real>> = fold.train.iter().map(|&i| ftr.rows[i].clone()).collect();
                let fy: Vec<StabilityLabel> = fold.train.iter().map(|&i| ftr.labels[i]).collect();
                let n_pos = fy.iter().filter(|l| l.is_failed()).count();
                if n_pos == 0 || n_pos == fy.len() {
                    continue; // single-class fold at small scale, nothing to fit
                }
                let model = train_kind(cfg, kind, &fx, &fy)?;
                let tx: Vec<Vec<Real>> = fold.test.iter().map(|&i| ftr.rows[i].clone()).collect();
                let ty: Vec<StabilityLabel> = fold.test.iter().map(|&i| ftr.labels[i]).collect();
                let predicted = model.predict(&tx)?;
                let scores = model.predict_score(&tx)?;
                let (row, _) = metric_row(
                    &name,
                    kind.as_str(),
                    fold.repeat,
                    fold.fold,
                    &ty,
                    &predicted,
                    &scores,
                )?;
                rows_cv.push(row);
            }
        }
        println!("dataset {name}: evaluated {} models", kinds.len());
    }

    confusion.flush()?;
    pf_table.flush()?;
    roc_table.flush()?;
    write_metrics_csv(&out_path(out, &digest, "metrics_test.csv"), &rows_test)?;
    write_metrics_csv(&out_path(out, &digest, "metrics_entire.csv"), &rows_entire)?;
    write_metrics_csv(&out_path(out, &digest, "metrics_cv.csv"), &rows_cv)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// report

const METRICS_HEADER: &str =
    "dataset,model,repeat,fold,accuracy,f1,auc,sensitivity,specificity,fpr";

/// ξ parsed back out of a dataset name minted by `dataset_name`.
fn xi_of(name: &str) -> Result<Real> {
    let tail = name
        .rsplit_once("_xi")
        .ok_or_else(|| Error::data(format!("dataset name {name:?} lacks a _xi suffix")))?
        .1;
    parse_real(tail, "xi")
}

fn cov_of(name: &str) -> Result<String> {
    let head = name
        .strip_prefix("cov")
        .and_then(|r| r.split_once("_xi"))
        .ok_or_else(|| Error::data(format!("dataset name {name:?} lacks a cov prefix")))?
        .0;
    Ok(head.to_string())
}

pub fn run_report(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let digest = cfg.digest()?;
    let cv = read_table(&out_path(out, &digest, "metrics_cv.csv"), METRICS_HEADER)?;
    let test = read_table(&out_path(out, &digest, "metrics_test.csv"), METRICS_HEADER)?;
    let roc = read_table(&out_path(out, &digest, "roc.csv"), "dataset,model,fpr,tpr")?;
    let pf = read_table(
        &out_path(out, &digest, "pf.csv"),
        "dataset,model,scope,n,pf_mc,pf_pred,abs_error",
    )?;

    let datasets: Vec<String> = cfg
        .campaign_specs()
        .iter()
        .map(ExperimentConfig::dataset_name)
        .collect();
    let models = &cfg.models;

    // CV accuracy boxplots, one figure per dataset, one box per model
    for ds in &datasets {
        let mut per_model: BTreeMap<&str, Vec<Real>> = BTreeMap::new();
        for r in &cv {
            if &r[0] == ds {
                per_model
                    .entry(models.iter().find(|m| **m == r[1]).map_or("?", |m| m))
                    .or_default()
                    .push(parse_real(&r[4], "accuracy")?);
            }
        }
        let all: Vec<Real> = per_model.values().flatten().copied().collect();
        let (lo, hi) = padded_range(all.iter().copied(), (0.0, 1.0));
        let mut fig = Figure::new(
            &format!("CV accuracy, dataset {ds}"),
            0.0,
            models.len() as f64,
            lo,
            hi,
        );
        fig.axis_labels("model", "accuracy");
        let ticks: Vec<f64> = (0..=4).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect();
        fig.ticks(&[], &ticks);
        for (i, m) in models.iter().enumerate() {
            let x = i as f64 + 0.5;
            if let Some(vals) = per_model.get(m.as_str()) {
                let stats = boxplot_stats(vals)?;
                let mean = vals.iter().sum::<Real>() / vals.len() as Real;
                fig.boxplot(x, 0.18, &stats, mean, PALETTE[i % PALETTE.len()]);
            }
            let px = fig.px(x);
            fig.text(px, crate::svg::HEIGHT - 30.0, m, "middle", 10);
        }
        std::fs::write(
            out_path(out, &digest, &format!("box_{ds}.svg")),
            fig.finish(),
        )?;
    }

    // ROC overlays per dataset with the chance diagonal
    for ds in &datasets {
        let mut fig = Figure::new(&format!("ROC, dataset {ds}"), 0.0, 1.0, 0.0, 1.0);
        fig.axis_labels("false positive rate", "true positive rate");
        fig.ticks(&[0.0, 0.25, 0.5, 0.75, 1.0], &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let (x0, y0) = (fig.px(0.0), fig.py(0.0));
        let (x1, y1) = (fig.px(1.0), fig.py(1.0));
        fig.line(x0, y0, x1, y1, "#999", Some("4 3"));
        for (i, m) in models.iter().enumerate() {
            let pts: Vec<(f64, f64)> = roc
                .iter()
                .filter(|r| &r[0] == ds && r[1] == *m)
                .map(|r| Ok((parse_real(&r[2], "fpr")?, parse_real(&r[3], "tpr")?)))
                .collect::<Result<_>>()?;
            if !pts.is_empty() {
                let color = PALETTE[i % PALETTE.len()];
                fig.polyline(&pts, color);
                fig.legend(i, m, color);
            }
        }
        std::fs::write(
            out_path(out, &digest, &format!("roc_{ds}.svg")),
            fig.finish(),
        )?;
    }

    // test-scope accuracy and AUC against the anisotropy ratio, per COV
    for metric in ["accuracy", "auc"] {
        let col = if metric == "accuracy" { 4 } else { 6 };
        for cov in cfg.cov_values.iter().map(|&c| num_token(c)) {
            let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
            for r in &test {
                if cov_of(&r[0])? == cov {
                    let v = parse_real(&r[col], metric)?;
                    if v.is_finite() {
                        series
                            .entry(models.iter().find(|m| **m == r[1]).map_or("?", |m| m))
                            .or_default()
                            .push((xi_of(&r[0])?, v));
                    }
                }
            }
            let xs: Vec<f64> = cfg
                .delta_h_values
                .iter()
                .map(|&d| d / cfg.delta_v)
                .collect();
            let (x_lo, x_hi) = padded_range(xs.iter().copied(), (0.0, 1.0));
            let (y_lo, y_hi) = padded_range(series.values().flatten().map(|&(_, v)| v), (0.0, 1.0));
            let mut fig = Figure::new(
                &format!("test {metric} vs anisotropy ratio, COV {cov}"),
                x_lo,
                x_hi,
                y_lo,
                y_hi,
            );
            fig.axis_labels("anisotropy ratio", metric);
            let yticks: Vec<f64> = (0..=4)
                .map(|i| y_lo + (y_hi - y_lo) * i as f64 / 4.0)
                .collect();
            fig.ticks(&xs, &yticks);
            for (i, m) in models.iter().enumerate() {
                if let Some(pts) = series.get(m.as_str()) {
                    let mut pts = pts.clone();
                    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                    let color = PALETTE[i % PALETTE.len()];
                    fig.polyline(&pts, color);
                    for &(x, y) in &pts {
                        fig.circle(x, y, 2.5, color);
                    }
                    fig.legend(i, m, color);
                }
            }
            std::fs::write(
                out_path(out, &digest, &format!("{metric}_vs_xi_cov{cov}.svg")),
                fig.finish(),
            )?;
        }
    }

    // Monte Carlo p_f with a one-sigma binomial band, predictions as markers
    {
        let test_pf: Vec<&Vec<String>> = pf.iter().filter(|r| r[2] == "test").collect();
        let mut band = Vec::new(); // (x, pf_mc, sigma)
        for (i, ds) in datasets.iter().enumerate() {
            if let Some(r) = test_pf.iter().find(|r| &r[0] == ds) {
                let n = parse_real(&r[3], "n")?;
                let p = parse_real(&r[4], "pf_mc")?;
                band.push((i as f64 + 0.5, p, (p * (1.0 - p) / n).sqrt()));
            }
        }
        let (lo, hi) = padded_range(
            band.iter()
                .flat_map(|&(_, p, s)| [p - s, p + s])
                .chain(test_pf.iter().map(|r| r[5].parse().unwrap_or(f64::NAN))),
            (0.0, 1.0),
        );
        let mut fig = Figure::new(
            "failure probability: MC band and surrogate estimates",
            0.0,
            datasets.len() as f64,
            lo.max(-0.02),
            hi.min(1.02),
        );
        fig.axis_labels("dataset", "p_f");
        let yticks: Vec<f64> = (0..=4).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect();
        fig.ticks(&[], &yticks);
        for &(x, p, s) in &band {
            fig.rect(x - 0.3, p - s, x + 0.3, p + s, "#dce9f5", "none");
            fig.line(
                fig.px(x - 0.3),
                fig.py(p),
                fig.px(x + 0.3),
                fig.py(p),
                "#1f77b4",
                None,
            );
        }
        for (i, ds) in datasets.iter().enumerate() {
            for (mi, m) in models.iter().enumerate() {
                if let Some(r) = test_pf.iter().find(|r| &r[0] == ds && r[1] == *m) {
                    fig.circle(
                        i as f64 + 0.5,
                        parse_real(&r[5], "pf_pred")?,
                        2.5,
                        PALETTE[mi % PALETTE.len()],
                    );
                }
            }
            let px = fig.px(i as f64 + 0.5);
            fig.text(px, crate::svg::HEIGHT - 30.0, ds, "middle", 9);
        }
        for (mi, m) in models.iter().enumerate() {
            fig.legend(mi, m, PALETTE[mi % PALETTE.len()]);
        }
        std::fs::write(out_path(out, &digest, "pf_band.svg"), fig.finish())?;
    }
    println!("report written for config {digest}");
    Ok(())
}

// ---------------------------------------------------------------------------
// timing

pub fn run_timing(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let digest = cfg.digest()?;
    cfg.write_resolved(out, &digest)?;
    let spec = cfg
        .campaign_specs()
        .into_iter()
        .next()
        .expect("validated non-empty grid");
    let name = ExperimentConfig::dataset_name(&spec);

    let t0 = Instant::now();
    let data = run_campaign(&spec)?;
    let campaign_total = t0.elapsed().as_secs_f64();
    let per_sim = campaign_total / data.len() as f64;

    // labeling cost alone, separate from field generation
    let model = rfmc::stability::SlopeModel::new(spec.geometry)?;
    let plan = rfmc::stability::SearchPlan::build(
        &model,
        rfmc::stability::SearchSpec::with_step(&spec.geometry, spec.search_step),
    )?;
    let probe = data.records.len().min(20);
    let t1 = Instant::now();
    for r in &data.records[..probe] {
        std::hint::black_box(plan.classify(&r.values));
    }
    let classify_mean = t1.elapsed().as_secs_f64() / probe as f64;

    let (train, test) = split_train_test(&data, &cfg.split_plan())?;
    let ftr = FeatureMatrix::from_dataset(&train);
    let fte = FeatureMatrix::from_dataset(&test);

    let mut stages = create(&out_path(out, &digest, "stage_times.csv"))?;
    writeln!(stages, "stage,seconds")?;
    writeln!(stages, "oracle_classify_mean,{classify_mean}")?;
    writeln!(stages, "campaign_total,{campaign_total}")?;
    writeln!(stages, "campaign_per_realization,{per_sim}")?;

    let mut table = create(&out_path(out, &digest, "timing.csv"))?;
    writeln!(
        table,
        "approach,samples,measured_cpu_s,extrapolated_full_scale_s,accuracy,f1,auc,pf_error"
    )?;
    writeln!(
        table,
        "monte_carlo,{},{campaign_total},{},1,1,1,0",
        data.len(),
        per_sim * FULL_SCALE_TOTAL
    )?;

    // surrogate sample count at full per-dataset scale
    let full_samples = match (cfg.split.fraction, cfg.split.count) {
        (Some(f), _) => (f * FULL_SCALE_PER_DATASET).round() as usize,
        (_, Some(c)) => c,
        _ => unreachable!("validated"),
    };
    for m in &cfg.models {
        let kind = crate::config::parse_kind(m)?;
        let t2 = Instant::now();
        let trained = train_kind(cfg, kind, &ftr.rows, &ftr.labels)?;
        let train_s = t2.elapsed().as_secs_f64();
        let t3 = Instant::now();
        let predicted = trained.predict(&fte.rows)?;
        let scores = trained.predict_score(&fte.rows)?;
        let predict_s = t3.elapsed().as_secs_f64();
        writeln!(stages, "train_{m},{train_s}")?;
        writeln!(stages, "predict_{m},{predict_s}")?;

        let cm = ConfusionMatrix::from_labels(&fte.labels, &predicted)?;
        let ms = metrics::<Real>(&cm);
        let auc = roc_auc(&scores, &fte.labels)
            .map(|r| r.auc)
            .unwrap_or(Real::NAN);
        let pf_err =
            (probability_of_failure(&predicted) - probability_of_failure(&fte.labels)).abs();
        writeln!(
            table,
            "{m},{full_samples},{},{},{},{},{auc},{pf_err}",
            train_s + predict_s,
            per_sim * full_samples as f64 + train_s + predict_s,
            ms.accuracy,
            ms.f1
        )?;
    }
    stages.flush()?;
    table.flush()?;
    println!(
        "timing for dataset {name}: {per_sim:.4} s per realization, extrapolated full-scale MC {:.0} s",
        per_sim * FULL_SCALE_TOTAL
    );
    Ok(())
}

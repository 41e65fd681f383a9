use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use funad_core::eval::evaluate;
use funad_core::experiments::{ratio_table, run_motivation, run_toy, ToyConfig};
use funad_core::feature_store::{
    self, load_features, load_labels, load_masks, save_features, sibling_path, DatasetManifest,
    FeatureTensor, ImageLabel, SyntheticGaussianConfig,
};
use funad_core::inference::{infer_dataset, load_maps, save_maps};
use funad_core::localnet::{load_checkpoint, save_checkpoint};
use funad_core::stats::{
    distance_histogram, log_grid, matching_ratio, pair_within_prob, GaussianPairModel, PairType,
    PROB_FLOOR,
};
use funad_core::train::{train_with, TrainConfig, TrainHooks, Validation};

use crate::io::{emit, parse_size, read_json, read_scores, to_json, write_file, write_scores};
use crate::{
    ContaminateArgs, EvalArgs, InferArgs, ReproMotivationArgs, ReproToyArgs, StatsEmpiricalArgs,
    StatsRatiosArgs, SynthArgs, TrainArgs,
};

fn load(path: &Path) -> Result<(FeatureTensor, DatasetManifest)> {
    load_features(path).with_context(|| format!("loading features from {}", path.display()))
}

fn labels_for(features: &Path, explicit: Option<&Path>) -> Result<Vec<ImageLabel>> {
    let path = explicit.map_or_else(|| sibling_path(features, "funl"), Path::to_path_buf);
    load_labels(&path).with_context(|| format!("loading labels from {}", path.display()))
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => read_json::<SyntheticGaussianConfig>(p)?,
        None => SyntheticGaussianConfig::motivation(0),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(n) = a.n_normal {
        config.n_normal = n;
    }
    if let Some(n) = a.n_anomaly {
        config.n_anomaly = n;
    }
    if let Some(p) = a.patches_per_image {
        config.patches_per_image = p;
    }
    let (tensor, manifest) = feature_store::generate_synthetic(&config)?;
    save_features(&tensor, &manifest, &a.out)?;
    log::info!(
        "wrote {} images ({} normal, {} anomaly) to {}",
        tensor.n_images(),
        config.n_normal,
        config.n_anomaly,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct MovedReport<'a> {
    moved_anomalies: &'a [usize],
    sources: Vec<(&'static str, usize)>,
}

pub fn contaminate(a: ContaminateArgs) -> Result<()> {
    let (normal, anomaly) = match (&a.pool, &a.normal, &a.anomaly) {
        (Some(pool), None, None) => {
            let (t, m) = load(pool)?;
            let labels = m
                .image_labels
                .with_context(|| format!("{} has no labels next to it", pool.display()))?;
            let pick = |want: bool| -> Vec<usize> {
                (0..labels.len()).filter(|&i| labels[i].is_anomaly() == want).collect()
            };
            (t.select_images(&pick(false))?, t.select_images(&pick(true))?)
        }
        (None, Some(n), Some(an)) => (load(n)?.0, load(an)?.0),
        _ => bail!("give either --pool or both --normal and --anomaly"),
    };
    let split = feature_store::contaminate(&normal, &anomaly, a.ratio, a.seed)?;
    save_features(&split.train, &DatasetManifest::default(), &a.out)?;
    let truth_path = a
        .truth
        .clone()
        .unwrap_or_else(|| sibling_path(&a.out, "truth.funl"));
    let labels = split.truth.image_labels.as_deref().expect("contaminate labels");
    write_file(&truth_path, feature_store::write_labels(labels)?)?;
    if let Some(p) = &a.moved_out {
        let report = MovedReport {
            moved_anomalies: &split.moved_anomalies,
            sources: split
                .sources
                .iter()
                .map(|&(l, i)| (if l.is_anomaly() { "anomaly" } else { "normal" }, i))
                .collect(),
        };
        write_file(p, to_json(&report)?)?;
    }
    log::info!(
        "training set: {} images, {} moved anomalies",
        split.train.n_images(),
        split.moved_anomalies.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct EmpiricalReport {
    matching: funad_core::stats::MatchingRatioReport,
    histograms: funad_core::stats::DistanceHistograms,
}

pub fn stats_empirical(a: StatsEmpiricalArgs) -> Result<()> {
    let (tensor, _) = load(&a.features)?;
    let labels = labels_for(&a.features, a.labels.as_deref())?;
    let matching = matching_ratio(&tensor, &labels)?;
    let histograms = distance_histogram(&tensor, &labels, a.bins)?;
    if let Some(p) = &a.hist_csv {
        write_file(p, histograms.to_csv())?;
    }
    emit(a.out.as_deref(), &to_json(&EmpiricalReport { matching, histograms })?)
}

fn ratio_cell(num: f64, den: f64) -> String {
    if den < PROB_FLOOR {
        String::from("underflow")
    } else {
        format!("{}", num / den)
    }
}

pub fn stats_ratios(a: StatsRatiosArgs) -> Result<()> {
    if a.n_tau < 2 || !(a.tau_min > 0.0 && a.tau_max >= a.tau_min) {
        bail!("need 0 < tau_min <= tau_max and n_tau >= 2");
    }
    let model = GaussianPairModel::new(
        vec![0.0; a.dim],
        vec![a.mu_gap; a.dim],
        a.sigma_normal,
        a.sigma_anomaly,
    )?;
    let mut out = String::from("tau,p_nn,p_aa,p_na,nn_over_aa,nn_over_na\n");
    for tau in log_grid(a.tau_min, a.tau_max, a.n_tau) {
        let nn = pair_within_prob(&model, PairType::NormalNormal, tau)?;
        let aa = pair_within_prob(&model, PairType::AnomalyAnomaly, tau)?;
        let na = pair_within_prob(&model, PairType::NormalAnomaly, tau)?;
        out.push_str(&format!(
            "{tau},{nn},{aa},{na},{},{}\n",
            ratio_cell(nn, aa),
            ratio_cell(nn, na)
        ));
    }
    emit(a.out.as_deref(), &out)
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut c = match &a.config {
        Some(p) => read_json::<TrainConfig>(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! apply {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = a.$flag { c.$($field).+ = v; })*
        };
    }
    apply!(
        epochs => epochs,
        ms_weight => ms_weight,
        tau_b => thresholds.tau_b,
        tau_n => thresholds.tau_n,
        tau_c => thresholds.tau_c,
        sample_ratio => sample_ratio,
        seed => seed,
        lr => lr,
        batch_images => batch_images,
        hidden1 => hidden1,
        hidden2 => hidden2,
        checkpoint_every => checkpoint_every,
    );
    c.validate()?;
    Ok(c)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let config = train_config(&a)?;
    let (features, _) = load(&a.features)?;
    let truth = a
        .truth
        .as_deref()
        .map(|p| load_labels(p).with_context(|| format!("loading truth from {}", p.display())))
        .transpose()?;
    let validation = match &a.validation {
        Some(p) => {
            let (t, _) = load(p)?;
            let l = labels_for(p, None)?;
            Some((t, l))
        }
        None => None,
    };

    let mut log_writer = match &a.log {
        Some(p) => Some(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => None,
    };
    let mut log_error: Option<std::io::Error> = None;
    let outcome = {
        let on_iteration = log_writer.as_mut().map(|w| {
            let err = &mut log_error;
            Box::new(move |row: &funad_core::train::IterationLog| {
                if err.is_none() {
                    let line = serde_json::to_string(row).expect("log rows serialize");
                    if let Err(e) = writeln!(w, "{line}") {
                        *err = Some(e);
                    }
                }
            }) as Box<dyn FnMut(&funad_core::train::IterationLog)>
        });
        let hooks = TrainHooks {
            truth: truth.as_deref(),
            validation: validation.as_ref().map(|(t, l)| Validation {
                features: t,
                labels: l,
                select_best: a.select_best,
            }),
            checkpoint_path: Some(&a.checkpoint),
            on_iteration,
            on_epoch: Some(Box::new(|e, _| {
                log::info!(
                    "epoch {} loss {:.5}{}",
                    e.epoch,
                    e.mean_total,
                    e.validation_auroc
                        .map_or(String::new(), |v| format!(" validation AUROC {v:.4}"))
                );
            })),
        };
        train_with(&features, &config, hooks)?
    };
    if let Some(e) = log_error {
        return Err(e).context("writing the training log");
    }
    if let Some(mut w) = log_writer {
        w.flush().context("writing the training log")?;
    }
    save_checkpoint(&a.checkpoint, &outcome.params, Some(&outcome.optimizer))?;
    if let Some(last) = outcome.epochs.last() {
        println!(
            "trained {} iterations over {} epochs; final mean loss {:.6}",
            outcome.iterations.len(),
            outcome.epochs.len(),
            last.mean_total
        );
    } else {
        println!("no epochs requested; wrote the initial weights");
    }
    if let Some(e) = outcome.best_epoch {
        println!("kept weights from epoch {e}");
    }
    Ok(())
}

pub fn infer(a: InferArgs) -> Result<()> {
    let (params, _) = load_checkpoint(&a.checkpoint)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let (features, manifest) = load(&a.features)?;
    let map_size = match (&a.maps_out, &a.map_size) {
        (None, _) => None,
        (Some(_), Some(s)) => Some(parse_size(s)?),
        (Some(_), None) => match (manifest.image_h, manifest.image_w) {
            (Some(h), Some(w)) => Some((h, w)),
            _ => bail!("no image size known for the maps; pass --map-size HxW"),
        },
    };
    let (scores, maps) = infer_dataset(&params, &features, map_size, a.blur_sigma)?;
    write_scores(&a.scores_out, &scores)?;
    if let (Some(p), Some(maps)) = (&a.maps_out, maps) {
        save_maps(p, &maps)?;
    }
    log::info!("scored {} images", scores.len());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let scores = read_scores(&a.scores)?;
    let mut truth = DatasetManifest::with_labels(
        load_labels(&a.labels).with_context(|| format!("loading {}", a.labels.display()))?,
    );
    if let Some(p) = &a.masks {
        truth.pixel_masks =
            Some(load_masks(p).with_context(|| format!("loading {}", p.display()))?);
    }
    let maps = a
        .maps
        .as_deref()
        .map(|p| load_maps(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let exclusion: Option<HashSet<usize>> = a
        .exclude
        .as_deref()
        .map(read_json::<Vec<usize>>)
        .transpose()?
        .map(|v| v.into_iter().collect());
    let report = evaluate(&scores, maps.as_deref(), &truth, exclusion.as_ref())?;
    emit(a.out.as_deref(), &to_json(&report)?)
}

fn out_file(dir: Option<&Path>, name: &str) -> Option<PathBuf> {
    dir.map(|d| d.join(name))
}

pub fn repro_motivation(a: ReproMotivationArgs) -> Result<()> {
    let rows = ratio_table(25)?;
    println!("pair-probability ratios, dim 16, sigma_N = 1, sigma_A = sqrt 2");
    println!("{:>10} {:>14} {:>16} {:>16}", "tau", "NN/AA", "NN/NA (same mu)", "NN/NA (far mu)");
    for r in &rows {
        println!(
            "{:>10.4} {:>14.4} {:>16.4} {:>16.4e}",
            r.tau, r.nn_aa, r.nn_na_concentric, r.nn_na_separated
        );
    }
    let mut csv = String::from("tau,nn_over_aa,nn_over_na_concentric,nn_over_na_separated\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.tau, r.nn_aa, r.nn_na_concentric, r.nn_na_separated
        ));
    }
    if let Some(p) = out_file(a.out_dir.as_deref(), "ratios.csv") {
        write_file(&p, csv)?;
    }

    println!();
    println!(
        "{:>6} {:>12} {:>13} {:>12} {:>9} {:>9} {:>9}",
        "seed", "true_normal", "true_anomaly", "false_ratio", "mean NN", "mean NA", "mean AA"
    );
    let mut reports = Vec::new();
    for seed in a.first_seed..a.first_seed + a.seeds {
        let r = run_motivation(seed, a.bins)?;
        println!(
            "{:>6} {:>12.4} {:>13.4} {:>12.4} {:>9.4} {:>9.4} {:>9.4}",
            seed,
            r.matching.true_normal,
            r.matching.true_anomaly,
            r.matching.false_ratio,
            r.mean_distance_nn,
            r.mean_distance_na,
            r.mean_distance_aa
        );
        if let (Some(p), Some(h)) = (
            out_file(a.out_dir.as_deref(), &format!("histogram_seed{seed}.csv")),
            &r.histograms,
        ) {
            write_file(&p, h.to_csv())?;
        }
        reports.push(r);
    }
    if let Some(p) = out_file(a.out_dir.as_deref(), "motivation.json") {
        write_file(&p, to_json(&reports)?)?;
    }
    Ok(())
}

pub fn repro_toy(a: ReproToyArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => read_json::<ToyConfig>(p)?,
        None => ToyConfig::default(),
    };
    if let Some(e) = a.epochs {
        config.train.epochs = e;
    }
    if let Some(l) = a.ms_weight {
        config.train.ms_weight = l;
    }
    config.train.validate()?;
    let every = a.every.max(1);
    let mut reports = Vec::new();
    let mut csv = String::from("seed,epoch,mean_loss,test_auroc,bank_purity\n");
    for seed in a.first_seed..a.first_seed + a.seeds {
        let r = run_toy(&config, seed)?;
        println!(
            "seed {seed}: {} iterations, held-out AUROC {:.4} -> {:.4}, bank purity {:.4}",
            r.iterations, r.initial_auroc, r.final_auroc, r.final_bank_purity
        );
        let trajectory: Vec<String> = r
            .epochs
            .iter()
            .filter(|e| e.epoch % every == 0 || e.epoch + 1 == r.epochs.len())
            .map(|e| format!("{}:{:.3}", e.epoch, e.test_auroc))
            .collect();
        println!("  AUROC by epoch  {}", trajectory.join(" "));
        for e in &r.epochs {
            csv.push_str(&format!(
                "{seed},{},{},{},{}\n",
                e.epoch, e.mean_total, e.test_auroc, e.bank_purity
            ));
        }
        reports.push(r);
    }
    let passing = reports.iter().filter(|r| r.final_auroc >= 0.95).count();
    println!("{passing}/{} seeds reach held-out AUROC >= 0.95", reports.len());
    if let Some(p) = out_file(a.out_dir.as_deref(), "trajectory.csv") {
        write_file(&p, csv)?;
    }
    if let Some(p) = out_file(a.out_dir.as_deref(), "toy.json") {
        write_file(&p, to_json(&reports)?)?;
    }
    Ok(())
}

//! Ske-score reports, the goodness test, temperature sweeps and ablation runners.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{SkeganConfig, VaskeganConfig};
use crate::model::{Model, TrainedModel};
use crate::render::render_grid;
use crate::skegan::{SkeganModel, Temperature};
use crate::stroke::{ske_score, Sketch, SketchDataset};
use crate::train::SkeganTrainer;
use crate::vaskegan::{VaskeganModel, VaskeganTrainer};
use crate::{Error, Real, Result};

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_SAMPLES: usize = 1000;
pub const PAPER_TEMPERATURES: [Real; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

/// Mean and population standard deviation of per-sketch scores. Degenerate
/// sketches (no on-paper points) are left out of both and counted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeScoreReport {
    pub mean: f64,
    pub std: f64,
    /// Sketches that entered the mean.
    pub n: usize,
    pub degenerate_count: usize,
}

impl std::fmt::Display for SkeScoreReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4} (n={}, degenerate={})", self.mean, self.std, self.n, self.degenerate_count)
    }
}

pub fn ske_score_report<'a>(sketches: impl IntoIterator<Item = &'a Sketch>) -> Result<SkeScoreReport> {
    let mut values = Vec::new();
    let mut degenerate_count = 0;
    for s in sketches {
        let sc = ske_score(s);
        if sc.degenerate {
            degenerate_count += 1;
        } else {
            values.push(sc.value as f64);
        }
    }
    if values.is_empty() {
        return Err(Error::AllDegenerate);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(SkeScoreReport { mean, std: var.sqrt(), n: values.len(), degenerate_count })
}

pub fn dataset_ske_score(dataset: &SketchDataset) -> Result<SkeScoreReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    ske_score_report(&dataset.sketches)
}

/// Scores `n_samples` unconditional samples.
pub fn model_ske_score<R: Rng>(model: &TrainedModel, n_samples: usize, tau: Temperature, rng: &mut R) -> Result<SkeScoreReport> {
    ske_score_report(&model.sample(n_samples, tau, rng)?)
}

/// `|mean_D - mean_M| < eps`.
pub fn goodness(data: &SkeScoreReport, model: &SkeScoreReport, eps: f64) -> bool {
    (data.mean - model.mean).abs() < eps
}

#[derive(Clone, Debug)]
pub struct TemperatureSweep {
    /// One row of `count` samples per temperature.
    pub svg: String,
    pub samples: Vec<Vec<Sketch>>,
    /// `None` where every sample at that temperature was degenerate.
    pub reports: Vec<(Real, Option<SkeScoreReport>)>,
}

pub fn temperature_sweep<R: Rng>(model: &TrainedModel, taus: &[Real], count: usize, rng: &mut R) -> Result<TemperatureSweep> {
    let temps = taus.iter().map(|&t| Temperature::new(t)).collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::with_capacity(taus.len());
    let mut reports = Vec::with_capacity(taus.len());
    for (&t, tau) in taus.iter().zip(temps) {
        let row = model.sample(count, tau, rng)?;
        let report = score_or_none(ske_score_report(&row))?;
        match &report {
            Some(r) => log::info!("tau {t}: {r}"),
            None => log::info!("tau {t}: all degenerate"),
        }
        reports.push((t, report));
        samples.push(row);
    }
    Ok(TemperatureSweep { svg: render_grid(&samples, 96.0, 1.5), samples, reports })
}

/// One row of an ablation table; `report` is `None` when every sample was degenerate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub value: f64,
    pub report: Option<SkeScoreReport>,
}

/// Pretrains once, then for every policy-gradient weight runs the configured
/// adversarial rounds from that shared starting point and scores the result.
pub fn pg_weight_ablation(dataset: &SketchDataset, weights: &[f64], cfg: &SkeganConfig, seed: u64, n_samples: usize, tau: Temperature) -> Result<Vec<AblationRow>> {
    let mut base = SkeganTrainer::new(SkeganModel::new(cfg.clone(), seed)?, dataset.n_max, seed);
    base.pretrain_generator(&dataset.sketches, cfg.pretrain_g_iters)?;
    base.pretrain_discriminator(&dataset.sketches, cfg.pretrain_d_iters)?;
    let mut rows = Vec::with_capacity(weights.len());
    for &w in weights {
        let mut model = base.model.clone();
        model.config.pg_weight = w;
        let mut t = SkeganTrainer::new(model, dataset.n_max, seed);
        t.counters = base.counters;
        for _ in 0..cfg.rounds {
            t.train_round(&dataset.sketches)?;
        }
        let trained = TrainedModel { model: Model::Skegan(t.model), n_max: dataset.n_max, offset_scale: dataset.offset_scale, category: String::new() };
        let report = score_or_none(model_ske_score(&trained, n_samples, tau, &mut t.rng))?;
        rows.push(AblationRow { setting: "pg_weight".into(), value: w, report });
    }
    Ok(rows)
}

/// One VASkeGAN run per KL weight.
pub fn w_kl_sweep(dataset: &SketchDataset, w_kls: &[f64], cfg: &VaskeganConfig, seed: u64, n_samples: usize, tau: Temperature) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(w_kls.len());
    for &w in w_kls {
        let mut c = cfg.clone();
        c.w_kl = w;
        let mut t = VaskeganTrainer::new(VaskeganModel::new(c, seed)?, dataset.n_max, seed);
        t.train(&dataset.sketches, cfg.iterations)?;
        let trained = TrainedModel { model: Model::Vaskegan(t.model), n_max: dataset.n_max, offset_scale: dataset.offset_scale, category: String::new() };
        let report = score_or_none(model_ske_score(&trained, n_samples, tau, &mut t.rng))?;
        rows.push(AblationRow { setting: "w_kl".into(), value: w, report });
    }
    Ok(rows)
}

fn score_or_none(r: Result<SkeScoreReport>) -> Result<Option<SkeScoreReport>> {
    match r {
        Ok(r) => Ok(Some(r)),
        Err(Error::AllDegenerate) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn format_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("setting      value   ske-score\n");
    for r in rows {
        let score = r.report.map_or_else(|| "all degenerate".to_string(), |rep| rep.to_string());
        let _ = writeln!(out, "{:<12} {:<7} {}", r.setting, r.value, score);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use crate::skegan::GeneratorConfig;
    use crate::stroke::{PenState, StrokePoint3, StrokePoint5};
    use crate::toy::{toy_corpus, TOY_SKE_SCORE};
    use proptest::prelude::*;

    fn sketch_with(down: usize, up: usize) -> Sketch {
        let mut pts = vec![StrokePoint5::new(0.1, 0.0, PenState::Down); down];
        pts.extend(vec![StrokePoint5::new(0.0, 0.1, PenState::Up); up]);
        pts.push(StrokePoint5::END);
        Sketch::new(pts, "")
    }

    fn report(mean: f64) -> SkeScoreReport {
        SkeScoreReport { mean, std: 0.0, n: 1, degenerate_count: 0 }
    }

    #[test]
    fn population_statistics() {
        // 1 lift over 10 touches and 3 over 10
        let r = ske_score_report(&[sketch_with(10, 1), sketch_with(10, 3)]).unwrap();
        assert!((r.mean - 0.2).abs() < 1e-15 && (r.std - 0.1).abs() < 1e-15);
        let same: Vec<Sketch> = (0..5).map(|_| sketch_with(10, 2)).collect();
        let r = ske_score_report(&same).unwrap();
        assert_eq!((r.mean, r.std, r.n), (0.2, 0.0, 5));
    }

    #[test]
    fn degenerates_are_counted_not_averaged() {
        let r = ske_score_report(&[sketch_with(4, 1), sketch_with(0, 3)]).unwrap();
        assert_eq!((r.mean, r.n, r.degenerate_count), (0.25, 1, 1));
        assert!(matches!(ske_score_report(&[sketch_with(0, 2)]), Err(Error::AllDegenerate)));
    }

    #[test]
    fn toy_corpus_score_is_known() {
        let d = toy_corpus(30, &mut seeded_rng(1)).unwrap();
        let r = dataset_ske_score(&d).unwrap();
        assert_eq!((r.mean, r.std, r.n), (TOY_SKE_SCORE as f64, 0.0, 30));
    }

    #[test]
    fn goodness_examples() {
        assert!(goodness(&report(0.18), &report(0.19), 0.05));
        assert!(!goodness(&report(0.18), &report(0.12), 0.05));
        assert!(goodness(&report(0.3), &report(0.3), 1e-12));
    }

    proptest! {
        #[test]
        fn report_mean_is_mean_of_scores(shape in prop::collection::vec((1usize..12, 0usize..6), 1..20)) {
            let sketches: Vec<Sketch> = shape.iter().map(|&(d, u)| sketch_with(d, u)).collect();
            let r = ske_score_report(&sketches).unwrap();
            let direct = shape.iter().map(|&(d, u)| u as f64 / d as f64).sum::<f64>() / shape.len() as f64;
            prop_assert!((r.mean - direct).abs() < 1e-12);
            prop_assert!(r.std >= 0.0);
        }

        #[test]
        fn goodness_is_symmetric(a in 0.0..2.0f64, b in 0.0..2.0f64, eps in 0.001..1.0f64) {
            prop_assert_eq!(goodness(&report(a), &report(b), eps), goodness(&report(b), &report(a), eps));
        }
    }

    fn tiny_trained() -> TrainedModel {
        let cfg = SkeganConfig { generator: GeneratorConfig { hidden: 6, mixtures: 2, recurrent_dropout: 0.0 }, disc_hidden: 4, ..SkeganConfig::toy() };
        TrainedModel { model: Model::Skegan(SkeganModel::new(cfg, 2).unwrap()), n_max: 10, offset_scale: 1.0, category: String::new() }
    }

    #[test]
    fn on_paper_only_model_scores_zero() {
        let mut m = tiny_trained();
        if let Model::Skegan(s) = &mut m.model {
            let head = s.generator.pen_head.clone();
            s.store.value_mut(head.w).fill(0.0);
            s.store.set_value(head.b, ndarray::array![[50.0, -50.0, -50.0]]).unwrap();
        }
        let r = model_ske_score(&m, 20, Temperature::ONE, &mut seeded_rng(1)).unwrap();
        assert_eq!((r.mean, r.n), (0.0, 20));
        let a = model_ske_score(&tiny_trained(), 30, Temperature::ONE, &mut seeded_rng(5));
        let b = model_ske_score(&tiny_trained(), 30, Temperature::ONE, &mut seeded_rng(5));
        assert_eq!(a.ok(), b.ok());
    }

    #[test]
    fn sweep_shapes() {
        let m = tiny_trained();
        let s = temperature_sweep(&m, &PAPER_TEMPERATURES, 8, &mut seeded_rng(3)).unwrap();
        assert_eq!(s.reports.len(), 5);
        assert!(s.samples.iter().all(|row| row.len() == 8));
        assert!(s.svg.contains(r#"width="768" height="480""#));
        assert!(temperature_sweep(&m, &[0.5, 0.0], 2, &mut seeded_rng(3)).is_err());
    }

    #[test]
    fn ablation_table_has_a_row_per_weight() {
        let raw: Vec<Sketch> = (0..8)
            .map(|i| Sketch::from_stroke3(&[StrokePoint3::new(1.0 + i as Real, 0.0, false), StrokePoint3::new(0.0, 1.0, true)], ""))
            .collect();
        let d = crate::stroke::normalize_offsets(&SketchDataset::new(raw).unwrap()).unwrap();
        let cfg = SkeganConfig {
            generator: GeneratorConfig { hidden: 4, mixtures: 2, recurrent_dropout: 0.0 },
            disc_hidden: 4,
            batch: 4,
            rollout_count: 2,
            pretrain_g_iters: 2,
            pretrain_d_iters: 2,
            rounds: 1,
            epoch_iters: Some(1),
            d_epochs_per_round: 1,
            ..SkeganConfig::toy()
        };
        let rows = pg_weight_ablation(&d, &[0.0, 1.0], &cfg, 4, 10, Temperature::ONE).unwrap();
        assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), vec![0.0, 1.0]);
        let table = format_table(&rows);
        assert_eq!(table.lines().count(), 3);
        let vcfg = VaskeganConfig { encoder_hidden: 3, decoder_hidden: 4, latent: 2, disc_hidden: 3, batch: 4, iterations: 2, ..VaskeganConfig::toy() };
        assert_eq!(w_kl_sweep(&d, &[0.25, 0.5], &vcfg, 4, 10, Temperature::ONE).unwrap().len(), 2);
    }
}

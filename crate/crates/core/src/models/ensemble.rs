//! Voting and stacking over independently fitted base classifiers.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix_seed, pos_weight, Classifier, ClassWeight, Inputs, LogisticModel, ModelKind, TrainConfig};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub kind: ModelKind,
    pub bases: Vec<Classifier>,
    /// Meta-learner over base probabilities (stacking only).
    pub meta: Option<LogisticModel>,
}

/// Label-stratified fold assignment of `rows`; each fold is sorted.
pub(crate) fn stratified_folds(labels: &[bool], rows: &[usize], folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); folds];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offset = 0;
    for class in [true, false] {
        let mut members: Vec<usize> = rows.iter().copied().filter(|&r| labels[r] == class).collect();
        members.sort_unstable();
        members.shuffle(&mut rng);
        for (i, r) in members.into_iter().enumerate() {
            out[(i + offset) % folds].push(r);
        }
        offset += rows.iter().filter(|&&r| labels[r] == class).count();
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

fn base_matrix(columns: &[Vec<f64>], rows: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, columns.len()), |(r, c)| columns[c][r])
}

impl Ensemble {
    pub fn fit(
        kind: ModelKind,
        config: &TrainConfig,
        inputs: &Inputs<'_>,
        labels: &[bool],
        train: &[usize],
        val: &[usize],
    ) -> Result<Self, Error> {
        if !kind.is_ensemble() {
            return Err(Error::Config(format!("{} is not an ensemble", kind.name())));
        }
        let fit_bases = |rows: &[usize], salt: u64| -> Result<Vec<Classifier>, Error> {
            config
                .ensemble_bases
                .iter()
                .enumerate()
                .map(|(i, &spec)| {
                    let mut cfg = config.clone();
                    cfg.seed = mix_seed(config.seed, &[salt, i as u64]);
                    let mut c = Classifier::new(spec, cfg);
                    c.fit(inputs, labels, rows, val)?;
                    Ok(c)
                })
                .collect()
        };

        let meta = if kind == ModelKind::Stacking {
            let folds = stratified_folds(labels, train, config.stacking_folds, mix_seed(config.seed, &[0x57]));
            let mut oof = vec![vec![0.0; inputs.rows()]; config.ensemble_bases.len()];
            for (f, held) in folds.iter().enumerate() {
                let rest: Vec<usize> = folds
                    .iter()
                    .enumerate()
                    .filter(|&(g, _)| g != f)
                    .flat_map(|(_, rows)| rows.iter().copied())
                    .collect();
                let mut rest = rest;
                rest.sort_unstable();
                for (b, base) in fit_bases(&rest, 1 + f as u64)?.iter().enumerate() {
                    let p = base.predict(inputs)?;
                    for &r in held {
                        oof[b][r] = p[r];
                    }
                }
            }
            let z = base_matrix(&oof, inputs.rows());
            let w = pos_weight(labels, train, ClassWeight::Balanced)?;
            let weights: Vec<f64> = labels.iter().map(|&l| if l { w } else { 1.0 }).collect();
            Some(LogisticModel::fit(&z, labels, train, &weights, config.logreg_l2)?)
        } else {
            None
        };

        Ok(Self {
            kind,
            bases: fit_bases(train, 0)?,
            meta,
        })
    }

    pub fn predict(&self, inputs: &Inputs<'_>) -> Result<Vec<f64>, Error> {
        let probs: Vec<Vec<f64>> = self.bases.iter().map(|b| b.predict(inputs)).collect::<Result<_, _>>()?;
        let n = inputs.rows();
        let m = probs.len() as f64;
        Ok(match self.kind {
            ModelKind::SoftVote => (0..n).map(|r| probs.iter().map(|p| p[r]).sum::<f64>() / m).collect(),
            ModelKind::HardVote => (0..n)
                .map(|r| probs.iter().filter(|p| p[r] >= 0.5).count() as f64 / m)
                .collect(),
            _ => {
                let meta = self.meta.as_ref().ok_or(Error::NotFitted)?;
                meta.predict(base_matrix(&probs, n).view())
            }
        })
    }
}

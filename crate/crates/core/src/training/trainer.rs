//! The update loop shared by every task.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use super::config::TrainConfig;
use super::partition::{freeze_mask_at, FinetuneStrategy, ParamPartition};
use crate::error::{Error, Result};
use crate::models::Mode;
use crate::tensor::{adam_step, save_checkpoint, AdamState, Checkpoint, Graph, ParamId, ParamStore, RngStream, Var};

/// A dataset together with its per-example objective.
pub trait Task {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Batching size of example `i` in tokens.
    fn size(&self, i: usize) -> usize;

    /// Number of predicted targets in example `i`; losses are normalized by
    /// the total over an update.
    fn targets(&self, i: usize) -> f64;

    /// Summed loss of example `i`. `rng` drives task randomness such as
    /// noising and masking; dropout comes from `mode`.
    fn loss(&self, g: &mut Graph, store: &ParamStore, i: usize, mode: &mut Mode, rng: &mut RngStream) -> Result<Var>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_metric: Option<f64>,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "step\tlr\ttrain_loss\tdev_metric\twall_ms";

/// Metrics log as TSV. Without `wall` the timing column is left empty so two
/// runs can be compared byte for byte.
pub fn metrics_tsv(rows: &[MetricRow], wall: bool) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let dev = r.dev_metric.map(|d| format!("{d:.6}")).unwrap_or_default();
        let ms = if wall { r.wall_ms.to_string() } else { String::new() };
        let _ = writeln!(s, "{}\t{:.8e}\t{:.6}\t{}\t{}", r.step, r.lr, r.train_loss, dev, ms);
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<MetricRow>,
    /// Parameters at the dev-best evaluation (earliest on ties).
    pub best: Option<ParamStore>,
    pub best_step: Option<usize>,
    pub best_metric: Option<f64>,
}

/// What may be updated: everything, or a strategy's partition.
#[derive(Clone, Copy, Debug)]
pub enum Trainable<'a> {
    All,
    Partition(&'a FinetuneStrategy, &'a ParamPartition),
}

impl Trainable<'_> {
    fn at(&self, step: usize, store: &ParamStore) -> BTreeSet<String> {
        match self {
            Trainable::All => store.name_set(),
            Trainable::Partition(s, p) => freeze_mask_at(step, s, p),
        }
    }
}

/// Shuffled, token-bounded micro-batches over repeated epochs.
struct Batcher<'a, T: Task + ?Sized> {
    task: &'a T,
    rng: RngStream,
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    max_tokens: usize,
}

impl<'a, T: Task + ?Sized> Batcher<'a, T> {
    fn new(task: &'a T, rng: RngStream, max_tokens: usize) -> Self {
        Batcher { task, rng, order: Vec::new(), pos: 0, epoch: 0, max_tokens }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order = (0..self.task.len()).collect();
            self.rng.split(self.epoch).shuffle(&mut self.order);
            self.epoch += 1;
            self.pos = 0;
        }
        let mut batch = Vec::new();
        let mut tokens = 0;
        while self.pos < self.order.len() {
            let i = self.order[self.pos];
            let s = self.task.size(i);
            if !batch.is_empty() && tokens + s > self.max_tokens {
                break;
            }
            batch.push(i);
            tokens += s;
            self.pos += 1;
        }
        batch
    }
}

pub fn train<T: Task + ?Sized>(
    task: &T,
    store: &mut ParamStore,
    cfg: &TrainConfig,
    trainable: Trainable<'_>,
    dev: &mut dyn FnMut(&ParamStore) -> Result<f64>,
    snapshot_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if task.is_empty() && cfg.max_updates > 0 {
        return Err(Error::Data("training data is empty".into()));
    }
    let root = RngStream::new(cfg.seed);
    let mut batcher = Batcher::new(task, root.split_str("batches"), cfg.max_tokens);
    let drop_root = root.split_str("dropout");
    let data_root = root.split_str("data");
    let mut adam: BTreeMap<ParamId, AdamState> = BTreeMap::new();
    let mut out = TrainOutcome { log: Vec::new(), best: None, best_step: None, best_metric: None };
    let mut current: Option<BTreeSet<String>> = None;
    let start = Instant::now();
    store.zero_grads();

    for step in 1..=cfg.max_updates {
        let effective = trainable.at(step, store);
        if current.as_ref() != Some(&effective) {
            store.set_trainable(&effective);
            current = Some(effective);
        }
        let items: Vec<usize> = (0..cfg.update_freq).flat_map(|_| batcher.next()).collect();
        let norm = items.iter().map(|&i| task.targets(i)).sum::<f64>().max(1.0);
        let mut loss_sum = 0.0;
        for (j, &i) in items.iter().enumerate() {
            let mut mode = Mode::train(drop_root.split(step as u64).split(j as u64));
            let mut rng = data_root.split(step as u64).split(j as u64);
            let mut g = Graph::new();
            let l = task.loss(&mut g, store, i, &mut mode, &mut rng)?;
            let v = g.scalar(l);
            if !v.is_finite() {
                if let Some(dir) = snapshot_dir {
                    let meta = serde_json::json!({ "step": step, "example": i, "loss": v.to_string() });
                    save_checkpoint(dir, &Checkpoint::from_store(store, meta))?;
                }
                return Err(Error::NonFiniteLoss { step, detail: format!("example {i} gave loss {v}") });
            }
            loss_sum += v;
            let scaled = g.scale(l, 1.0 / norm);
            g.backward(scaled)?;
            g.accumulate_param_grads(store)?;
        }

        let ids: Vec<ParamId> = store.ids().filter(|&id| store.tensor(id).grad().is_some()).collect();
        let sq: f64 = ids
            .iter()
            .map(|&id| store.tensor(id).grad().unwrap().iter().map(|x| x * x).sum::<f64>())
            .sum();
        let gnorm = sq.sqrt();
        if !gnorm.is_finite() {
            return Err(Error::NonFiniteLoss { step, detail: format!("gradient norm {gnorm}") });
        }
        let factor = if gnorm > cfg.clip_norm { cfg.clip_norm / gnorm } else { 1.0 };
        let lr = cfg.schedule.lr_at(step as u64)?;
        for id in ids {
            let t = store.tensor_mut(id);
            let grad: Vec<f64> = t.grad().unwrap().iter().map(|x| x * factor).collect();
            let st = adam.entry(id).or_insert_with(|| AdamState::new(grad.len(), cfg.adam));
            adam_step(t, &grad, st, lr)?;
        }
        store.zero_grads();

        let eval_now = step == cfg.max_updates || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
        let dev_metric = if eval_now { Some(dev(store)?) } else { None };
        if let Some(m) = dev_metric {
            if out.best_metric.is_none_or(|b| m > b) {
                out.best_metric = Some(m);
                out.best_step = Some(step);
                out.best = Some(store.clone());
            }
        }
        out.log.push(MetricRow {
            step,
            lr,
            train_loss: loss_sum / norm,
            dev_metric,
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }
    store.set_trainable(&store.name_set());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Init, LrSchedule};

    /// Linear regression examples: loss = sum_k (w·x - y)^2.
    struct Reg {
        xs: Vec<(Vec<f64>, f64)>,
        w: ParamId,
    }

    impl Task for Reg {
        fn len(&self) -> usize {
            self.xs.len()
        }
        fn size(&self, _: usize) -> usize {
            2
        }
        fn targets(&self, _: usize) -> f64 {
            1.0
        }
        fn loss(&self, g: &mut Graph, s: &ParamStore, i: usize, mode: &mut Mode, _: &mut RngStream) -> Result<Var> {
            let (x, y) = &self.xs[i];
            let w = g.param(s, self.w);
            let w = g.dropout(w, 0.2, mode.rng())?;
            let xv = g.constant(vec![x.len(), 1], x.clone())?;
            let p = g.matmul(w, xv)?;
            let d = g.add_const(p, &[-y])?;
            let sq = g.mul(d, d)?;
            Ok(g.sum(sq))
        }
    }

    fn setup() -> (Reg, ParamStore) {
        let mut s = ParamStore::new();
        let w = s.declare("encoder.w", &[1, 3], Init::WEIGHT).unwrap();
        s.materialize(&RngStream::new(0));
        let mut r = RngStream::new(1);
        let xs = (0..12)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| r.normal()).collect();
                let y = 0.5 * x[0] - x[1] + 2.0 * x[2];
                (x, y)
            })
            .collect();
        (Reg { xs, w }, s)
    }

    fn cfg(updates: usize) -> TrainConfig {
        let mut c = TrainConfig::quick(updates, 0.05);
        c.schedule = LrSchedule::inverse_sqrt(0.05, 1);
        c
    }

    #[test]
    fn zero_updates_is_identity() {
        let (t, mut s) = setup();
        let before = s.clone();
        let o = train(&t, &mut s, &cfg(0), Trainable::All, &mut |_| Ok(0.0), None).unwrap();
        assert!(o.log.is_empty());
        assert_eq!(s.get("encoder.w"), before.get("encoder.w"));
    }

    #[test]
    fn loss_decreases_and_runs_repeat() {
        let run = || {
            let (t, mut s) = setup();
            let o = train(&t, &mut s, &cfg(60), Trainable::All, &mut |_| Ok(0.0), None).unwrap();
            (o, s)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert!(a.log.last().unwrap().train_loss < a.log[0].train_loss);
        assert_eq!(metrics_tsv(&a.log, false), metrics_tsv(&b.log, false));
        assert_eq!(sa.get("encoder.w"), sb.get("encoder.w"));
    }

    #[test]
    fn accumulation_matches_large_batch() {
        let (t, mut a) = setup();
        let mut b = a.clone();
        let mut small = cfg(5);
        small.max_tokens = 4;
        small.update_freq = 3;
        let mut big = cfg(5);
        big.max_tokens = 12;
        train(&t, &mut a, &small, Trainable::All, &mut |_| Ok(0.0), None).unwrap();
        train(&t, &mut b, &big, Trainable::All, &mut |_| Ok(0.0), None).unwrap();
        let (x, y) = (a.get("encoder.w").unwrap().data(), b.get("encoder.w").unwrap().data());
        assert!(x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-10));
    }

    #[test]
    fn best_checkpoint_prefers_earliest_maximum() {
        let (t, mut s) = setup();
        let mut c = cfg(6);
        c.eval_every = 1;
        let metrics = [1.0, 3.0, 2.0, 3.0, 0.0, 3.0];
        let mut k = 0;
        let o = train(
            &t,
            &mut s,
            &c,
            Trainable::All,
            &mut |_| {
                k += 1;
                Ok(metrics[k - 1])
            },
            None,
        )
        .unwrap();
        assert_eq!(o.best_step, Some(2));
        assert_eq!(o.log.iter().filter(|r| r.dev_metric.is_some()).count(), 6);
    }

    #[test]
    fn frozen_params_untouched_and_nan_aborts() {
        let (t, mut s) = setup();
        let p = ParamPartition { trainable: BTreeSet::new(), frozen: s.name_set() };
        let st = FinetuneStrategy::new(super::super::partition::StrategyKind::Full);
        let before = s.clone();
        train(&t, &mut s, &cfg(10), Trainable::Partition(&st, &p), &mut |_| Ok(0.0), None).unwrap();
        assert_eq!(s.get("encoder.w").unwrap().data(), before.get("encoder.w").unwrap().data());

        let (mut t, mut s) = setup();
        t.xs[3].1 = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        let err = train(&t, &mut s, &cfg(10), Trainable::All, &mut |_| Ok(0.0), Some(dir.path())).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }));
        assert!(dir.path().join("manifest.json").exists());
    }
}

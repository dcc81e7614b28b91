//! Central finite-difference checks of analytic gradients in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::graph::{Graph, Mode, Var};
use crate::layers::{BatchNormLayer, Conv2dLayer, DenseLayer};
use crate::params::{BufferStore, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entry with the largest error, as `name[index]`.
    pub worst: String,
    /// Analytic and numeric derivative at the worst entry.
    pub worst_pair: (f64, f64),
}

impl GradcheckReport {
    fn new() -> Self {
        GradcheckReport { max_rel_error: 0.0, checked: 0, worst: String::new(), worst_pair: (0.0, 0.0) }
    }

    fn record(&mut self, analytic: f64, numeric: f64, what: impl FnOnce() -> String) {
        let err = rel_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = what();
            self.worst_pair = (analytic, numeric);
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }

    fn merge(mut self, other: GradcheckReport) -> Self {
        if other.max_rel_error > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
            self.worst_pair = other.worst_pair;
        }
        self.checked += other.checked;
        self
    }
}

/// Perturbs every entry of every parameter in `store` by `STEP` in both
/// directions and compares `eval` differences with `analytic`. Entries are
/// evaluated in parallel on private copies of the store; the report does
/// not depend on the thread count.
pub fn check_params<F>(store: &mut ParamStore<f64>, analytic: &[(ParamId, Vec<f64>)], eval: F) -> Result<GradcheckReport>
where
    F: Fn(&ParamStore<f64>) -> Result<f64> + Sync,
{
    let entries: Vec<(ParamId, usize)> = store
        .iter()
        .flat_map(|(id, p)| (0..p.value.len()).map(move |k| (id, k)))
        .collect();
    let base: &ParamStore<f64> = store;
    let numeric: Vec<Result<f64>> = entries
        .par_iter()
        .map_init(
            || base.clone(),
            |local, &(id, k)| {
                let orig = local.value(id).data()[k];
                local.get_mut(id).value.data_mut()[k] = orig + STEP;
                let up = eval(local);
                local.get_mut(id).value.data_mut()[k] = orig - STEP;
                let down = eval(local);
                local.get_mut(id).value.data_mut()[k] = orig;
                Ok((up? - down?) / (2.0 * STEP))
            },
        )
        .collect();
    let mut report = GradcheckReport::new();
    for (&(id, k), n) in entries.iter().zip(numeric) {
        let a = analytic.iter().find(|(p, _)| *p == id).map_or(0.0, |(_, g)| g[k]);
        report.record(a, n?, || format!("{}[{k}]", base.get(id).name));
    }
    Ok(report)
}

/// Checks parameter and input gradients of the scalar built by `build`.
/// Buffers are cloned for every evaluation so running statistics stay fixed.
pub fn check_graph<F>(
    store: &mut ParamStore<f64>,
    buffers: &BufferStore<f64>,
    inputs: &[Tensor<f64>],
    build: F,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &mut BufferStore<f64>, &[Var]) -> Result<Var> + Sync,
{
    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut b = buffers.clone();
        let mut g = Graph::new(store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let loss = build(&mut g, &mut b, &vars)?;
        Ok(g.value(loss).data()[0])
    };
    let (param_grads, input_grads) = {
        let mut b = buffers.clone();
        let mut g = Graph::new(store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input_with_grad(t.clone())).collect();
        let loss = build(&mut g, &mut b, &vars)?;
        let grads = g.backward(loss)?;
        let ig: Vec<Vec<f64>> = vars
            .iter()
            .map(|&v| grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).len()]))
            .collect();
        (grads.params().to_vec(), ig)
    };
    let mut report = check_params(store, &param_grads, |s| eval(s, inputs))?;
    let mut inp = inputs.to_vec();
    let mut ir = GradcheckReport::new();
    for (i, analytic) in input_grads.iter().enumerate() {
        for (k, &a) in analytic.iter().enumerate() {
            let orig = inp[i].data()[k];
            inp[i].data_mut()[k] = orig + STEP;
            let up = eval(store, &inp)?;
            inp[i].data_mut()[k] = orig - STEP;
            let down = eval(store, &inp)?;
            inp[i].data_mut()[k] = orig;
            ir.record(a, (up - down) / (2.0 * STEP), || format!("input{i}[{k}]"));
        }
    }
    report = report.merge(ir);
    Ok(report)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("non-empty shape")
}

/// One small graph per differentiable op, each checked against finite differences.
pub fn op_suite() -> Result<Vec<(&'static str, GradcheckReport)>> {
    let mut out = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let conv = Conv2dLayer::new(&mut store, "c", 2, 3, (3, 2), (2, 1), true, &mut rng);
    let x = random(&[2, 2, 5, 4], &mut rng);
    let target = random(&[2, 3, 3, 4], &mut rng);
    out.push((
        "conv2d",
        check_graph(&mut store, &BufferStore::new(), &[x, target], |g, _, v| {
            let y = conv.forward(g, v[0])?;
            g.mse_loss(y, v[1])
        })?,
    ));

    for (name, mode) in [("batch_norm (train)", Mode::Train), ("batch_norm (eval)", Mode::Eval)] {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let mut buffers = BufferStore::new();
        let bn = BatchNormLayer::new(&mut store, &mut buffers, "bn", 3, &mut rng);
        store.set_values(bn.gamma, vec![0.7, 1.3, -0.4])?;
        store.set_values(bn.beta, vec![0.1, -0.2, 0.3])?;
        *buffers.get_mut(bn.running_var) = Tensor::new(vec![3], vec![0.5, 2.0, 1.5])?;
        let x = random(&[2, 3, 2, 3], &mut rng);
        let target = random(&[2, 3, 2, 3], &mut rng);
        out.push((
            name,
            check_graph(&mut store, &buffers, &[x, target], |g, b, v| {
                let y = bn.forward(g, b, v[0], mode)?;
                g.mse_loss(y, v[1])
            })?,
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let dense = DenseLayer::new(&mut store, "d", 6, 4, true, &mut rng);
    let x = random(&[3, 6], &mut rng);
    let target = random(&[3, 4], &mut rng);
    out.push((
        "dense + relu",
        check_graph(&mut store, &BufferStore::new(), &[x, target], |g, _, v| {
            let y = dense.forward(g, v[0])?;
            let y = g.relu(y);
            g.mse_loss(y, v[1])
        })?,
    ));

    let mut store = ParamStore::<f64>::new();
    let maps = random(&[2, 3, 4, 5], &mut rng);
    let chan = random(&[2, 3], &mut rng);
    let time = random(&[3, 4, 1], &mut rng);
    let target = random(&[2, 3], &mut rng);
    out.push((
        "broadcast add + global_avg_pool",
        check_graph(&mut store, &BufferStore::new(), &[maps, chan, time, target], |g, _, v| {
            let c = g.reshape(v[1], vec![2, 3, 1, 1])?;
            let y = g.add(v[0], c)?;
            let y = g.add(y, v[2])?;
            let p = g.global_avg_pool(y)?;
            g.mse_loss(p, v[3])
        })?,
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new();
    let x = random(&[5, 3], &mut rng);
    let target = random(&[3, 2], &mut rng);
    out.push((
        "slice_rows + transpose + reshape",
        check_graph(&mut store, &BufferStore::new(), &[x, target], |g, _, v| {
            let s = g.slice_rows(v[0], 2, 2)?;
            let t = g.transpose(s)?;
            let f = g.reshape(t, vec![3, 2])?;
            g.mse_loss(f, v[1])
        })?,
    ));

    let mut store = ParamStore::<f64>::new();
    let x = random(&[2, 3, 2], &mut rng);
    out.push((
        "flatten + sum",
        check_graph(&mut store, &BufferStore::new(), &[x], |g, _, v| {
            let f = g.flatten(v[0])?;
            let r = g.relu(f);
            Ok(g.sum(r))
        })?,
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let mut buffers = BufferStore::new();
    let conv = Conv2dLayer::new(&mut store, "conv", 1, 3, (3, 3), (2, 1), false, &mut rng);
    let bn = BatchNormLayer::new(&mut store, &mut buffers, "bn", 3, &mut rng);
    let dense = DenseLayer::new(&mut store, "fc", 3, 2, true, &mut rng);
    let x = random(&[3, 1, 5, 4], &mut rng);
    let target = random(&[3, 2], &mut rng);
    out.push((
        "conv -> bn -> relu -> pool -> dense -> mse",
        check_graph(&mut store, &buffers, &[x, target], |g, b, v| {
            let y = conv.forward(g, v[0])?;
            let y = bn.forward(g, b, y, Mode::Train)?;
            let y = g.relu(y);
            let y = g.global_avg_pool(y)?;
            let y = dense.forward(g, y)?;
            g.mse_loss(y, v[1])
        })?,
    ));
    Ok(out)
}

//! A minimal trainer for a softmax output layer over discrete inputs, with
//! an optional single hidden layer, fitted by log-loss gradient descent.
//!
//! Full-batch training runs on the empirical joint table rather than the
//! sample list: the mean log-loss only depends on the counts, so one epoch
//! costs O(|X|·|Y|·k) regardless of n.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jacobi::one_sided_jacobi;
use crate::linalg::{self, InversePolicy};
use crate::prob::{empirical_joint, FiniteDist, JointDist};
use crate::projection::{center_columns, Activation, HiddenParams, SoftmaxParams};

/// P̃(y | s) ∝ exp(v(y)ᵀs + b(y)), stabilized by log-sum-exp.
pub fn softmax_forward(params: &SoftmaxParams, s: &DVector<f64>) -> Result<FiniteDist> {
    if s.len() != params.k() {
        return Err(Error::DimensionMismatch(format!(
            "feature has {} entries, weights expect {}",
            s.len(),
            params.k()
        )));
    }
    let logits = &params.v * s + &params.b;
    FiniteDist::new(softmax(logits.as_slice()))
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn log_sum_exp(logits: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = logits.clone().fold(f64::NEG_INFINITY, f64::max);
    m + logits.map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Training data: the empirical joint weights P̂(x,y) (|Y|×|X|) and, when
/// built from samples, the samples themselves for minibatch mode.
#[derive(Debug, Clone)]
pub struct Dataset {
    weights: DMatrix<f64>,
    samples: Option<Vec<(usize, usize)>>,
}

impl Dataset {
    pub fn from_samples(samples: Vec<(usize, usize)>, nx: usize, ny: usize) -> Result<Self> {
        let j = empirical_joint(&samples, nx, ny)?;
        Ok(Self {
            weights: j.table().clone(),
            samples: Some(samples),
        })
    }

    /// Exact-distribution mode: the loss is the population log-loss.
    pub fn from_joint(j: &JointDist) -> Self {
        Self {
            weights: j.table().clone(),
            samples: None,
        }
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn joint(&self) -> Result<JointDist> {
        match &self.samples {
            Some(s) => empirical_joint(s, self.nx(), self.ny()),
            None => JointDist::new(self.weights.clone()),
        }
    }

    pub fn nx(&self) -> usize {
        self.weights.ncols()
    }

    pub fn ny(&self) -> usize {
        self.weights.nrows()
    }

    pub fn samples(&self) -> Option<&[(usize, usize)]> {
        self.samples.as_deref()
    }
}

/// A softmax layer on features s(x). Without a hidden layer `input` holds
/// s(x) directly; with one it holds t(x) and s = σ(Wt + c). One row per x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub output: SoftmaxParams,
    pub hidden: Option<HiddenParams>,
    #[serde(with = "linalg::serde_rows")]
    pub input: DMatrix<f64>,
}

/// Gradients of the mean log-loss, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub v: DMatrix<f64>,
    pub b: DVector<f64>,
    pub w: Option<DMatrix<f64>>,
    pub c: Option<DVector<f64>>,
}

impl Network {
    pub fn nx(&self) -> usize {
        self.input.nrows()
    }

    pub fn ny(&self) -> usize {
        self.output.ny()
    }

    /// s(x), one row per input symbol.
    pub fn features(&self) -> DMatrix<f64> {
        match &self.hidden {
            Some(h) => h.apply(&self.input),
            None => self.input.clone(),
        }
    }

    /// Logits ℓ(y,x), |Y|×|X|.
    pub fn logits(&self) -> DMatrix<f64> {
        let l = &self.output.v * self.features().transpose();
        DMatrix::from_fn(l.nrows(), l.ncols(), |y, x| l[(y, x)] + self.output.b[y])
    }

    /// Model conditional P̃(y|x) as a |Y|×|X| table.
    pub fn conditional(&self) -> DMatrix<f64> {
        let l = self.logits();
        let mut p = DMatrix::zeros(l.nrows(), l.ncols());
        for x in 0..l.ncols() {
            let col = softmax(l.column(x).as_slice());
            p.set_column(x, &DVector::from_vec(col));
        }
        p
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if data.nx() != self.nx() || data.ny() != self.ny() {
            return Err(Error::DimensionMismatch(format!(
                "network is {}x{}, data is {}x{}",
                self.ny(),
                self.nx(),
                data.ny(),
                data.nx()
            )));
        }
        Ok(())
    }

    /// Mean log-loss −Σ P̂(x,y) log P̃(y|x).
    pub fn log_loss(&self, data: &Dataset) -> Result<f64> {
        self.check(data)?;
        Ok(self.loss_on(&data.weights))
    }

    fn loss_on(&self, weights: &DMatrix<f64>) -> f64 {
        let l = self.logits();
        let mut loss = 0.0;
        for x in 0..l.ncols() {
            let lse = log_sum_exp(l.column(x).iter().cloned());
            for y in 0..l.nrows() {
                let w = weights[(y, x)];
                if w > 0.0 {
                    loss -= w * (l[(y, x)] - lse);
                }
            }
        }
        loss
    }

    pub fn gradients(&self, data: &Dataset) -> Result<Gradients> {
        self.check(data)?;
        Ok(self.gradients_on(&data.weights))
    }

    fn gradients_on(&self, weights: &DMatrix<f64>) -> Gradients {
        let s = self.features();
        let p = self.conditional();
        // G(y,x) = ∂loss/∂ℓ(y,x) = P̂(x)P̃(y|x) − P̂(x,y)
        let px: Vec<f64> = (0..weights.ncols())
            .map(|x| weights.column(x).sum())
            .collect();
        let g = DMatrix::from_fn(p.nrows(), p.ncols(), |y, x| {
            px[x] * p[(y, x)] - weights[(y, x)]
        });
        let gv = &g * &s;
        let gb = DVector::from_fn(g.nrows(), |y, _| g.row(y).sum());
        let (gw, gc) = match &self.hidden {
            Some(h) => {
                let ds = g.transpose() * &self.output.v;
                let a = h.pre_activation(&self.input);
                let delta = DMatrix::from_fn(ds.nrows(), ds.ncols(), |x, z| {
                    ds[(x, z)] * h.activation.derivative(a[(x, z)])
                });
                let gw = delta.transpose() * &self.input;
                let gc = DVector::from_fn(delta.ncols(), |z, _| delta.column(z).sum());
                (Some(gw), Some(gc))
            }
            None => (None, None),
        };
        Gradients {
            v: gv,
            b: gb,
            w: gw,
            c: gc,
        }
    }

    /// All parameters flattened: v (row-major), b, then W (row-major), c.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut out = row_major(&self.output.v);
        out.extend(self.output.b.iter());
        if let Some(h) = &self.hidden {
            out.extend(row_major(&h.w));
            out.extend(h.c.iter());
        }
        out
    }

    pub fn set_param_vector(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_vector().len() {
            return Err(Error::DimensionMismatch("parameter vector length".into()));
        }
        let mut it = p.iter().cloned();
        fill_row_major(&mut self.output.v, &mut it);
        for b in self.output.b.iter_mut() {
            *b = it.next().expect("length checked");
        }
        if let Some(h) = &mut self.hidden {
            fill_row_major(&mut h.w, &mut it);
            for c in h.c.iter_mut() {
                *c = it.next().expect("length checked");
            }
        }
        Ok(())
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn fill_row_major(m: &mut DMatrix<f64>, it: &mut impl Iterator<Item = f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)] = it.next().expect("length checked");
        }
    }
}

impl Gradients {
    /// Flattened in the same order as [`Network::param_vector`].
    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = row_major(&self.v);
        out.extend(self.b.iter());
        if let Some(w) = &self.w {
            out.extend(row_major(w));
        }
        if let Some(c) = &self.c {
            out.extend(c.iter());
        }
        out
    }

    fn norm_sq(&self, cfg: &TrainConfig) -> f64 {
        let mut n = 0.0;
        if !cfg.freeze_output {
            n += self.v.norm_squared() + self.b.norm_squared();
        }
        if !cfg.freeze_hidden {
            n += self.w.as_ref().map_or(0.0, |w| w.norm_squared());
            n += self.c.as_ref().map_or(0.0, |c| c.norm_squared());
        }
        n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Minibatch size; only used when `minibatch` is set.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub freeze_output: bool,
    pub freeze_hidden: bool,
    /// Stochastic minibatch updates over the samples instead of full-batch
    /// descent on the joint table.
    pub minibatch: bool,
    /// Full-batch stopping threshold on the gradient norm.
    pub grad_tol: f64,
    /// Record the loss every this many epochs (and at the last one).
    pub trace_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            batch_size: 256,
            epochs: 10_000,
            seed: 0,
            init_scale: 1e-2,
            freeze_output: false,
            freeze_hidden: false,
            minibatch: false,
            grad_tol: 1e-9,
            trace_every: 1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidInput(format!(
                "learning rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be >= 1".into()));
        }
        if self.minibatch && self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainedNet {
    pub network: Network,
    /// (epoch, loss) pairs; epoch 0 is the initial loss.
    pub loss_trace: Vec<(usize, f64)>,
    pub epochs_run: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

impl TrainedNet {
    pub fn output(&self) -> &SoftmaxParams {
        &self.network.output
    }

    pub fn hidden(&self) -> Option<&HiddenParams> {
        self.network.hidden.as_ref()
    }

    pub fn initial_loss(&self) -> f64 {
        self.loss_trace.first().map_or(f64::NAN, |t| t.1)
    }

    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().map_or(f64::NAN, |t| t.1)
    }

    /// Loss trace as CSV with header `epoch,loss`.
    pub fn write_trace_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "loss"])?;
        for (e, l) in &self.loss_trace {
            out.write_record([e.to_string(), format!("{l:.17e}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    DMatrix::from_fn(rows, cols, |_, _| scale * n.sample(rng))
}

fn apply_step(net: &mut Network, g: &Gradients, lr: f64, cfg: &TrainConfig) {
    if !cfg.freeze_output {
        net.output.v -= &g.v * lr;
        net.output.b -= &g.b * lr;
    }
    if !cfg.freeze_hidden {
        if let (Some(h), Some(gw), Some(gc)) = (&mut net.hidden, &g.w, &g.c) {
            h.w -= gw * lr;
            h.c -= gc * lr;
        }
    }
}

/// Gradient descent from `init`. Full-batch descent stops once the gradient
/// norm over the trainable parameters is at most `grad_tol`.
pub fn train(init: Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainedNet> {
    cfg.validate()?;
    init.check(data)?;
    let mut net = init;
    let every = cfg.trace_every.max(1);
    let mut trace = vec![(0, net.loss_on(&data.weights))];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_ba7c);
    let mut order: Vec<usize> = data
        .samples
        .as_ref()
        .map_or(Vec::new(), |s| (0..s.len()).collect());
    if cfg.minibatch && data.samples.is_none() {
        return Err(Error::InvalidInput(
            "minibatch mode needs a sample-backed dataset".into(),
        ));
    }
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;
    let mut epoch = 0;
    while epoch < cfg.epochs {
        let g = net.gradients_on(&data.weights);
        grad_norm = g.norm_sq(cfg).sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: format!(
                    "gradient is not finite; last loss {}",
                    trace.last().map_or(f64::NAN, |t| t.1)
                ),
            });
        }
        if !cfg.minibatch && grad_norm <= cfg.grad_tol {
            converged = true;
            break;
        }
        epoch += 1;
        if cfg.minibatch {
            let samples = data.samples.as_ref().expect("checked above");
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let mut w = DMatrix::zeros(data.ny(), data.nx());
                let inv = 1.0 / chunk.len() as f64;
                for &i in chunk {
                    let (x, y) = samples[i];
                    w[(y, x)] += inv;
                }
                let gb = net.gradients_on(&w);
                apply_step(&mut net, &gb, cfg.learning_rate, cfg);
            }
        } else {
            apply_step(&mut net, &g, cfg.learning_rate, cfg);
        }
        let loss = net.loss_on(&data.weights);
        if !loss.is_finite() {
            trace.push((epoch, loss));
            return Err(Error::Training {
                epoch,
                reason: format!("loss became {loss}"),
            });
        }
        if epoch % every == 0 || epoch == cfg.epochs {
            trace.push((epoch, loss));
        }
    }
    if trace.last().map(|t| t.0) != Some(epoch) {
        trace.push((epoch, net.loss_on(&data.weights)));
    }
    Ok(TrainedNet {
        network: net,
        loss_trace: trace,
        epochs_run: epoch,
        grad_norm,
        converged,
    })
}

/// Output layer on a fixed feature map `s` (|X|×k), Gaussian initialization.
pub fn train_softmax(data: &Dataset, s: &DMatrix<f64>, cfg: &TrainConfig) -> Result<TrainedNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = Network {
        output: SoftmaxParams {
            v: gaussian_matrix(data.ny(), s.ncols(), cfg.init_scale, &mut rng),
            b: gaussian_matrix(data.ny(), 1, cfg.init_scale, &mut rng)
                .column(0)
                .into_owned(),
        },
        hidden: None,
        input: s.clone(),
    };
    let cfg = TrainConfig {
        freeze_output: false,
        ..cfg.clone()
    };
    train(net, data, &cfg)
}

/// Hidden layer (W, c) on a fixed input map `t` (|X|×m) under a frozen
/// output layer.
pub fn train_hidden(
    data: &Dataset,
    t: &DMatrix<f64>,
    output: &SoftmaxParams,
    activation: Activation,
    cfg: &TrainConfig,
) -> Result<TrainedNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = output.k();
    let net = Network {
        output: output.clone(),
        hidden: Some(HiddenParams {
            w: gaussian_matrix(k, t.ncols(), cfg.init_scale, &mut rng),
            c: gaussian_matrix(k, 1, cfg.init_scale, &mut rng)
                .column(0)
                .into_owned(),
            activation,
        }),
        input: t.clone(),
    };
    let cfg = TrainConfig {
        freeze_output: true,
        freeze_hidden: false,
        ..cfg.clone()
    };
    train(net, data, &cfg)
}

/// Both layers: one hidden layer of width k on input `t`, then softmax.
pub fn train_network(
    data: &Dataset,
    t: &DMatrix<f64>,
    k: usize,
    activation: Activation,
    cfg: &TrainConfig,
) -> Result<TrainedNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = Network {
        hidden: Some(HiddenParams {
            w: gaussian_matrix(k, t.ncols(), cfg.init_scale, &mut rng),
            c: gaussian_matrix(k, 1, cfg.init_scale, &mut rng)
                .column(0)
                .into_owned(),
            activation,
        }),
        output: SoftmaxParams {
            v: gaussian_matrix(data.ny(), k, cfg.init_scale, &mut rng),
            b: gaussian_matrix(data.ny(), 1, cfg.init_scale, &mut rng)
                .column(0)
                .into_owned(),
        },
        input: t.clone(),
    };
    train(net, data, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheck {
    /// ‖g_analytic − g_fd‖ / max(‖g_analytic‖, ‖g_fd‖) over output parameters.
    pub output_rel_err: f64,
    pub hidden_rel_err: Option<f64>,
}

/// Compare analytic gradients with central differences of step `h`.
pub fn gradient_check(net: &Network, data: &Dataset, h: f64) -> Result<GradCheck> {
    net.check(data)?;
    let analytic = net.gradients_on(&data.weights).to_vector();
    let p0 = net.param_vector();
    let mut probe = net.clone();
    let mut fd = vec![0.0; p0.len()];
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] = p0[i] + h;
        probe.set_param_vector(&p)?;
        let up = probe.loss_on(&data.weights);
        p[i] = p0[i] - h;
        probe.set_param_vector(&p)?;
        let down = probe.loss_on(&data.weights);
        fd[i] = (up - down) / (2.0 * h);
    }
    let n_out = net.output.v.len() + net.output.b.len();
    let rel = |a: &[f64], b: &[f64]| {
        let diff = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = na.max(nb);
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    };
    Ok(GradCheck {
        output_rel_err: rel(&analytic[..n_out], &fd[..n_out]),
        hidden_rel_err: net
            .hidden
            .as_ref()
            .map(|_| rel(&analytic[n_out..], &fd[n_out..])),
    })
}

/// Parameters of a softmax model (s, v, b) on a finite input alphabet.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoftmaxSolution {
    /// s(x), |X|×k
    #[serde(with = "linalg::serde_rows")]
    pub s: DMatrix<f64>,
    #[serde(with = "linalg::serde_rows")]
    pub v: DMatrix<f64>,
    #[serde(with = "linalg::serde_vec")]
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaugeMode {
    /// Remove the P_Y-mean of v and b.
    #[default]
    Shift,
    /// Compare Ξ^Y(Ξ^X)ᵀ and the bias offsets ṽμ_s + d̃.
    Product,
    /// Whiten s, then rotate orthogonally onto the reference.
    Procrustes,
}

#[derive(Debug, Clone, Serialize)]
pub struct GaugeAlignment {
    pub learned: SoftmaxSolution,
    pub theory: SoftmaxSolution,
    /// Frobenius norm of the stacked differences.
    pub residual: f64,
    pub max_abs: f64,
}

fn stacked_diff(a: &[&DMatrix<f64>], b: &[&DMatrix<f64>]) -> (f64, f64) {
    let mut sq = 0.0;
    let mut mx = 0.0_f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        sq += d.norm_squared();
        mx = mx.max(linalg::max_abs(&d));
    }
    (sq.sqrt(), mx)
}

fn col(v: DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    DMatrix::from_column_slice(n, 1, v.as_slice())
}

/// Offsets ṽ(y)ᵀμ_s + d̃(y): the part of the logits not carried by s̃.
fn offsets(sol: &SoftmaxSolution, px: &FiniteDist, py: &FiniteDist) -> DVector<f64> {
    let p = SoftmaxParams {
        v: sol.v.clone(),
        b: sol.b.clone(),
    };
    let mu = sol.s.transpose() * px.to_vector();
    p.v_tilde(py) * mu + p.d_tilde(py)
}

/// Express `sol` in whitened, centered coordinates: s̃Λ^{-1/2}, ṽΛ^{1/2},
/// and offsets as the bias.
fn whiten(sol: &SoftmaxSolution, px: &FiniteDist, py: &FiniteDist) -> Result<SoftmaxSolution> {
    let s = center_columns(&sol.s, px);
    let cov = s.transpose() * DMatrix::from_diagonal(&px.to_vector()) * &s;
    let inv_sqrt = linalg::sym_inv_sqrt(&cov, InversePolicy::PseudoInverse)?;
    let v = center_columns(&sol.v, py) * linalg::sym_sqrt(&cov);
    Ok(SoftmaxSolution {
        s: s * inv_sqrt.matrix,
        v,
        b: offsets(sol, px, py),
    })
}

/// Bring `learned` into the gauge of `theory` and measure what is left.
pub fn gauge_align(
    learned: &SoftmaxSolution,
    theory: &SoftmaxSolution,
    px: &FiniteDist,
    py: &FiniteDist,
    mode: GaugeMode,
) -> Result<GaugeAlignment> {
    if learned.s.shape() != theory.s.shape()
        || learned.v.shape() != theory.v.shape()
        || learned.b.len() != theory.b.len()
    {
        return Err(Error::DimensionMismatch(
            "learned and theory parameters differ in shape".into(),
        ));
    }
    if learned.s.nrows() != px.len() || learned.v.nrows() != py.len() {
        return Err(Error::DimensionMismatch(
            "parameters do not match the marginals".into(),
        ));
    }
    match mode {
        GaugeMode::Shift => {
            let norm = |sol: &SoftmaxSolution| {
                let b = sol.b.add_scalar(-py.expect(sol.b.as_slice()));
                SoftmaxSolution {
                    s: sol.s.clone(),
                    v: center_columns(&sol.v, py),
                    b,
                }
            };
            let (l, t) = (norm(learned), norm(theory));
            let (residual, max_abs) = stacked_diff(
                &[&l.s, &l.v, &col(l.b.clone())],
                &[&t.s, &t.v, &col(t.b.clone())],
            );
            Ok(GaugeAlignment {
                learned: l,
                theory: t,
                residual,
                max_abs,
            })
        }
        GaugeMode::Product => {
            let prod = |sol: &SoftmaxSolution| {
                let s = center_columns(&sol.s, px);
                let v = center_columns(&sol.v, py);
                let sx = px.sqrt_vector();
                let sy = py.sqrt_vector();
                let p = v * s.transpose();
                DMatrix::from_fn(p.nrows(), p.ncols(), |y, x| sy[y] * p[(y, x)] * sx[x])
            };
            let (pl, pt) = (prod(learned), prod(theory));
            let (ol, ot) = (col(offsets(learned, px, py)), col(offsets(theory, px, py)));
            let (residual, max_abs) = stacked_diff(&[&pl, &ol], &[&pt, &ot]);
            Ok(GaugeAlignment {
                learned: learned.clone(),
                theory: theory.clone(),
                residual,
                max_abs,
            })
        }
        GaugeMode::Procrustes => {
            let l = whiten(learned, px, py)?;
            let t = whiten(theory, px, py)?;
            // Q = argmin ‖L Q − T‖ over orthogonal Q, in the P_X inner product
            let m = l.s.transpose() * DMatrix::from_diagonal(&px.to_vector()) * &t.s;
            let svd = one_sided_jacobi(&m)?;
            let q = &svd.u * svd.v.transpose();
            let q = if q.ncols() == 0 {
                q
            } else {
                repair_orthogonal(q)
            };
            let aligned = SoftmaxSolution {
                s: &l.s * &q,
                v: &l.v * &q,
                b: l.b.clone(),
            };
            let (residual, max_abs) = stacked_diff(
                &[&aligned.s, &aligned.v, &col(aligned.b.clone())],
                &[&t.s, &t.v, &col(t.b.clone())],
            );
            Ok(GaugeAlignment {
                learned: aligned,
                theory: t,
                residual,
                max_abs,
            })
        }
    }
}

/// Zero singular values leave zero columns in U; fill them so Q stays
/// orthogonal.
fn repair_orthogonal(q: DMatrix<f64>) -> DMatrix<f64> {
    let k = q.ncols();
    if (q.transpose() * &q - DMatrix::identity(k, k)).amax() < 1e-12 {
        return q;
    }
    let o = linalg::orthonormal_columns(&q);
    linalg::complete_basis(&o, k - o.ncols())
}

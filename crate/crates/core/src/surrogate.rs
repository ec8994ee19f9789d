//! Reservoir-computing surrogate: a leaky echo-state network with a ridge
//! readout, usable as a differentiable forecast model for assimilation in
//! reservoir space.
//!
//! Inputs are standardised per component before entering the input matrix;
//! the readout maps reservoir states back to raw system units.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::ad::{CsrMap, DenseMap, LinearMap, SharedMap, Var};
use crate::assim::{GaussianDiag, ObsOperator, ObservationBatch, WindowProblem};
use crate::error::{check_len, Error, Result};
use crate::integrate::Dynamics;
use crate::obsgen::rng_for;
use crate::scalar::Scalar;
use crate::trajectory::Trajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReservoirSpec {
    pub n_reservoir: usize,
    /// Fraction of zero entries in the adjacency matrix.
    pub sparsity: f64,
    pub spectral_radius: f64,
    pub sigma_u: f64,
    /// Leak rate α.
    pub leak: f64,
    /// Bias σ_b, one entry per reservoir node. When empty, drawn uniformly
    /// from `[−bias_scale, bias_scale]`.
    pub bias: Vec<f64>,
    pub bias_scale: f64,
    pub ridge_lambda: f64,
    pub seed: u64,
}

impl ReservoirSpec {
    /// Defaults for an `input_dim`-dimensional system: 50 nodes per input,
    /// capped at 4000.
    pub fn for_input(input_dim: usize, seed: u64) -> Self {
        Self {
            n_reservoir: (50 * input_dim).min(4000),
            sparsity: 0.99,
            spectral_radius: 0.9,
            sigma_u: 0.9877,
            leak: 0.9,
            bias: Vec::new(),
            bias_scale: 1.0,
            ridge_lambda: 1e-6,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_reservoir == 0 {
            return Err(Error::contract("reservoir needs at least one node"));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::contract(format!(
                "sparsity {} outside [0, 1): an empty adjacency has zero spectral radius",
                self.sparsity
            )));
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius.is_finite()) {
            return Err(Error::contract("spectral radius must be positive"));
        }
        if !(self.leak > 0.0 && self.leak <= 1.0) {
            return Err(Error::contract("leak rate must lie in (0, 1]"));
        }
        if !self.bias.is_empty() && self.bias.len() != self.n_reservoir {
            return Err(Error::contract("bias must be empty or one entry per node"));
        }
        if !(self.bias_scale >= 0.0 && self.bias_scale.is_finite()) {
            return Err(Error::contract(
                "bias scale must be finite and non-negative",
            ));
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(Error::contract("ridge λ must be non-negative"));
        }
        Ok(())
    }
}

/// Per-component affine standardisation `(u − mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn fit<T: Scalar>(data: &Trajectory<T>) -> Self {
        let (mean, sd) = data.component_stats();
        Self {
            mean: mean.iter().map(|m| m.as_f64()).collect(),
            scale: sd
                .iter()
                .map(|s| if s.as_f64() > 0.0 { s.as_f64() } else { 1.0 })
                .collect(),
        }
    }
}

#[derive(Clone)]
pub struct ReservoirModel<T: Scalar> {
    spec: ReservoirSpec,
    input_dim: usize,
    adjacency: Arc<CsrMap<T>>,
    /// Raw `W_in`: one uniform(−1, 1) entry per row.
    w_in: Vec<T>,
    standardizer: Standardizer,
    /// `σ_u · W_in · diag(1/scale)`.
    input_map: SharedMap<T>,
    /// `σ_b − σ_u · W_in · (mean/scale)`.
    offset: Vec<T>,
    readout: Option<Arc<DenseMap<T>>>,
    /// Per-node SD of the reservoir states seen while training the readout.
    state_sd: Vec<f64>,
}

impl<T: Scalar> std::fmt::Debug for ReservoirModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReservoirModel")
            .field("spec", &self.spec)
            .field("input_dim", &self.input_dim)
            .field("nnz", &self.adjacency.nnz())
            .field("trained", &self.readout.is_some())
            .finish()
    }
}

/// Largest eigenvalue modulus of a dense square matrix.
pub fn spectral_radius(n: usize, row_major: &[f64]) -> f64 {
    let m = DMatrix::from_row_slice(n, n, row_major);
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Draws the adjacency and input matrices. The readout is left unset.
pub fn build_reservoir<T: Scalar>(
    spec: &ReservoirSpec,
    input_dim: usize,
) -> Result<ReservoirModel<T>> {
    spec.validate()?;
    if input_dim == 0 {
        return Err(Error::contract(
            "reservoir input dimension must be at least one",
        ));
    }
    let n = spec.n_reservoir;
    let density = 1.0 - spec.sparsity;
    let unit = Uniform::new_inclusive(-1.0f64, 1.0).expect("valid bounds");
    let mut seed = spec.seed;
    let (triplets, rho) = loop {
        let mut rng = rng_for(seed, 0xA5);
        let mut triplets = Vec::with_capacity((density * (n * n) as f64 * 1.1) as usize + 1);
        for r in 0..n {
            for c in 0..n {
                if rng.random::<f64>() < density {
                    triplets.push((r, c, unit.sample(&mut rng)));
                }
            }
        }
        let mut dense = vec![0.0; n * n];
        for &(r, c, v) in &triplets {
            dense[r * n + c] = v;
        }
        let rho = spectral_radius(n, &dense);
        if rho > 0.0 {
            break (triplets, rho);
        }
        log::warn!(
            "reservoir draw with seed {seed} has zero spectral radius; redrawing with seed {}",
            seed + 1
        );
        seed += 1;
    };
    let factor = spec.spectral_radius / rho;
    let adjacency = CsrMap::from_triplets(
        n,
        n,
        triplets
            .into_iter()
            .map(|(r, c, v)| (r, c, T::lit(v * factor)))
            .collect(),
    );
    // one uniform(−1, 1) input weight per node, inputs assigned round-robin
    let mut rng = rng_for(seed, 0xB7);
    let mut w_in = vec![T::zero(); n * input_dim];
    for i in 0..n {
        w_in[i * input_dim + i % input_dim] = T::lit(unit.sample(&mut rng));
    }
    let mut spec = spec.clone();
    if spec.bias.is_empty() {
        let mut rng = rng_for(seed, 0xC9);
        spec.bias = (0..n)
            .map(|_| spec.bias_scale * unit.sample(&mut rng))
            .collect();
    }
    let mut model = ReservoirModel {
        spec,
        input_dim,
        adjacency: Arc::new(adjacency),
        w_in,
        standardizer: Standardizer::identity(input_dim),
        input_map: Arc::new(DenseMap::new(0, 0, Vec::new())),
        offset: Vec::new(),
        readout: None,
        state_sd: Vec::new(),
    };
    model.set_standardizer(Standardizer::identity(input_dim))?;
    Ok(model)
}

impl<T: Scalar> ReservoirModel<T> {
    pub fn spec(&self) -> &ReservoirSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_reservoir(&self) -> usize {
        self.spec.n_reservoir
    }

    pub fn adjacency(&self) -> &CsrMap<T> {
        &self.adjacency
    }

    pub fn w_in(&self) -> &[T] {
        &self.w_in
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn state_sd(&self) -> &[f64] {
        &self.state_sd
    }

    pub fn is_trained(&self) -> bool {
        self.readout.is_some()
    }

    /// `W_out` as a shared linear map (reservoir → system space).
    pub fn readout_map(&self) -> Result<SharedMap<T>> {
        match &self.readout {
            Some(r) => Ok(r.clone()),
            None => Err(Error::contract("reservoir readout has not been trained")),
        }
    }

    pub fn readout(&self) -> Option<&DenseMap<T>> {
        self.readout.as_deref()
    }

    /// Installs a trained readout (row-major `n_u × n_r`) and the reservoir
    /// state SDs recorded during training.
    pub fn set_readout(&mut self, w_out: Vec<T>, state_sd: Vec<f64>) -> Result<()> {
        check_len("readout", self.input_dim * self.n_reservoir(), w_out.len())?;
        check_len("reservoir state SD", self.n_reservoir(), state_sd.len())?;
        self.readout = Some(Arc::new(DenseMap::new(
            self.input_dim,
            self.n_reservoir(),
            w_out,
        )));
        self.state_sd = state_sd;
        Ok(())
    }

    pub fn set_standardizer(&mut self, s: Standardizer) -> Result<()> {
        check_len("standardizer", self.input_dim, s.mean.len())?;
        check_len("standardizer", self.input_dim, s.scale.len())?;
        let (n, m) = (self.n_reservoir(), self.input_dim);
        let su = self.spec.sigma_u;
        let mut scaled = vec![T::zero(); n * m];
        let mut offset = vec![T::zero(); n];
        for i in 0..n {
            let mut shift = 0.0;
            for j in 0..m {
                let w = self.w_in[i * m + j].as_f64() * su;
                scaled[i * m + j] = T::lit(w / s.scale[j]);
                shift += w * s.mean[j] / s.scale[j];
            }
            let b = self.spec.bias.get(i).copied().unwrap_or(0.0);
            offset[i] = T::lit(b - shift);
        }
        self.input_map = Arc::new(DenseMap::new(n, m, scaled));
        self.offset = offset;
        self.standardizer = s;
        Ok(())
    }

    /// `r ← α tanh(A r + σ_u W_in ũ + σ_b) + (1 − α) r` with `ũ` the
    /// standardised input.
    pub fn advance(&self, r: &[T], u: &[T]) -> Vec<T> {
        debug_assert_eq!(r.len(), self.n_reservoir());
        debug_assert_eq!(u.len(), self.input_dim);
        let ar = self.adjacency.apply_vec(r);
        let wu = self.input_map.apply_vec(u);
        let a = T::lit(self.spec.leak);
        let keep = T::one() - a;
        ar.iter()
            .zip(&wu)
            .zip(&self.offset)
            .zip(r)
            .map(|(((&x, &y), &c), &ri)| a * (x + y + c).tanh() + keep * ri)
            .collect()
    }

    /// Recorded version of [`advance`](Self::advance).
    pub fn advance_var<'t>(&self, r: Var<'t, T>, u: Var<'t, T>) -> Var<'t, T> {
        let a = T::lit(self.spec.leak);
        let adj: SharedMap<T> = self.adjacency.clone();
        let pre = r.apply(&adj) + u.apply(&self.input_map);
        let act = pre.add_const(&self.offset).tanh() * a;
        if self.spec.leak == 1.0 {
            act
        } else {
            act + r * (T::one() - a)
        }
    }

    /// Teacher-forced drive from `r0`: returns the states `r(1..=len)` where
    /// `r(k)` has seen inputs `u(0..k)`.
    pub fn drive(&self, r0: &[T], inputs: &Trajectory<T>) -> Result<Trajectory<T>> {
        check_len("reservoir drive input", self.input_dim, inputs.dim())?;
        let mut out = Trajectory::with_capacity(self.n_reservoir(), inputs.len());
        let mut r = r0.to_vec();
        for u in inputs.states() {
            r = self.advance(&r, u);
            out.push(&r)?;
        }
        Ok(out)
    }

    /// Teacher-forced spin-up from rest; the final reservoir state.
    pub fn synchronize(&self, recent_truth: &Trajectory<T>) -> Result<Vec<T>> {
        if recent_truth.is_empty() {
            return Err(Error::contract(
                "synchronization needs at least one input state",
            ));
        }
        let states = self.drive(&vec![T::zero(); self.n_reservoir()], recent_truth)?;
        Ok(states.last().unwrap().to_vec())
    }

    /// [`synchronize`](Self::synchronize) with i.i.d. Gaussian noise of SD
    /// `noise_sd` added to every input.
    pub fn synchronize_noisy(
        &self,
        recent_truth: &Trajectory<T>,
        noise_sd: f64,
        seed: u64,
    ) -> Result<Vec<T>> {
        let mut rng = rng_for(seed, 0x5C);
        let normal =
            Normal::new(0.0, noise_sd.max(0.0)).map_err(|e| Error::contract(e.to_string()))?;
        let noisy: Vec<T> = recent_truth
            .as_flat()
            .iter()
            .map(|&v| v + T::lit(normal.sample(&mut rng)))
            .collect();
        let noisy = Trajectory::from_flat(recent_truth.dim(), noisy)?;
        self.synchronize(&noisy)
    }

    /// Closed-loop step: the readout is fed back as the next input.
    pub fn step_closed(&self, r: &[T]) -> Result<Vec<T>> {
        let u = self.readout_map()?.apply_vec(r);
        Ok(self.advance(r, &u))
    }

    /// Autonomous forecast in system space: `W_out r(t)` for `t = 0..=n`.
    pub fn forecast_system(&self, r0: &[T], n: usize) -> Result<Trajectory<T>> {
        let w = self.readout_map()?;
        let states = Dynamics::forecast(self, r0, n)?;
        states.map_states(self.input_dim, |r| w.apply_vec(r))
    }
}

#[derive(Serialize, Deserialize)]
struct StoredReservoir {
    spec: ReservoirSpec,
    input_dim: usize,
    standardizer: Standardizer,
    state_sd: Vec<f64>,
}

impl<T: Scalar> ReservoirModel<T> {
    /// Writes the adjacency (as `nnz × 3` triplets), `W_in` and `W_out`
    /// under `dir`, with the spec and standardiser in the headers.
    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        use crate::data::write_array;
        let w_out = self
            .readout
            .as_ref()
            .ok_or_else(|| Error::contract("cannot save an untrained reservoir"))?;
        let meta = serde_json::to_value(StoredReservoir {
            spec: self.spec.clone(),
            input_dim: self.input_dim,
            standardizer: self.standardizer.clone(),
            state_sd: self.state_sd.clone(),
        })
        .map_err(|e| Error::Header(e.to_string()))?;
        let trip: Vec<f64> = self
            .adjacency
            .triplets()
            .flat_map(|(r, c, v)| [r as f64, c as f64, v.as_f64()])
            .collect();
        let n = self.n_reservoir();
        write_array(
            dir,
            "reservoir_adjacency",
            vec![self.adjacency.nnz(), 3],
            meta,
            &trip,
        )?;
        let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        write_array(
            dir,
            "reservoir_w_in",
            vec![n, self.input_dim],
            serde_json::Value::Null,
            &f(&self.w_in),
        )?;
        write_array(
            dir,
            "reservoir_w_out",
            vec![self.input_dim, n],
            serde_json::Value::Null,
            &f(w_out.data()),
        )?;
        Ok(())
    }

    pub fn load(dir: &std::path::Path) -> Result<Self> {
        use crate::data::read_array;
        let (h, trip) = read_array(dir, "reservoir_adjacency")?;
        let stored: StoredReservoir = serde_json::from_value(h.metadata)
            .map_err(|e| Error::Header(format!("reservoir metadata: {e}")))?;
        let n = stored.spec.n_reservoir;
        let m = stored.input_dim;
        let triplets = trip
            .chunks_exact(3)
            .map(|t| {
                let (r, c) = (t[0] as usize, t[1] as usize);
                if r >= n || c >= n {
                    return Err(Error::Header("adjacency triplet out of range".into()));
                }
                Ok((r, c, T::lit(t[2])))
            })
            .collect::<Result<Vec<_>>>()?;
        let (hi, w_in) = read_array(dir, "reservoir_w_in")?;
        let (ho, w_out) = read_array(dir, "reservoir_w_out")?;
        if hi.shape != [n, m] || ho.shape != [m, n] {
            return Err(Error::Header(
                "reservoir matrix shapes disagree with the spec".into(),
            ));
        }
        let mut model = ReservoirModel {
            spec: stored.spec,
            input_dim: m,
            adjacency: Arc::new(CsrMap::from_triplets(n, n, triplets)),
            w_in: w_in.into_iter().map(T::lit).collect(),
            standardizer: Standardizer::identity(m),
            input_map: Arc::new(DenseMap::new(0, 0, Vec::new())),
            offset: Vec::new(),
            readout: None,
            state_sd: Vec::new(),
        };
        model.set_standardizer(stored.standardizer)?;
        model.set_readout(w_out.into_iter().map(T::lit).collect(), stored.state_sd)?;
        Ok(model)
    }
}

impl<T: Scalar> Dynamics<T> for ReservoirModel<T> {
    fn dim(&self) -> usize {
        self.n_reservoir()
    }

    fn rollout_var<'t>(&self, x0: Var<'t, T>, n: usize) -> Vec<Var<'t, T>> {
        let w = self
            .readout_map()
            .expect("closed-loop rollout needs a trained readout");
        let mut out = Vec::with_capacity(n + 1);
        let mut r = x0;
        out.push(r);
        for _ in 0..n {
            let u = r.apply(&w);
            r = self.advance_var(r, u);
            out.push(r);
        }
        out
    }

    fn forecast(&self, x0: &[T], n: usize) -> Result<Trajectory<T>> {
        check_len("reservoir state", self.n_reservoir(), x0.len())?;
        let mut out = Trajectory::with_capacity(self.n_reservoir(), n + 1);
        out.push(x0)?;
        let mut r = x0.to_vec();
        for step in 1..=n {
            r = self.step_closed(&r)?;
            if !crate::scalar::all_finite(&r) {
                return Err(Error::Divergence { step });
            }
            out.push(&r)?;
        }
        Ok(out)
    }
}

/// Training diagnostics for the readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutReport {
    pub samples: usize,
    pub washout: usize,
    pub train_rmse: f64,
}

/// Fits `W_out` by ridge regression of `targets(k)` on the reservoir state
/// after driving with `inputs(0..=k)`. The first `washout` states are
/// discarded. Fits the input standardiser on `inputs` first.
pub fn train_readout<T: Scalar>(
    model: &mut ReservoirModel<T>,
    inputs: &Trajectory<T>,
    targets: &Trajectory<T>,
    washout: usize,
) -> Result<ReadoutReport> {
    check_len("training targets", inputs.len(), targets.len())?;
    check_len("training target dimension", model.input_dim, targets.dim())?;
    if washout >= inputs.len() {
        return Err(Error::contract(
            "washout consumes the whole training sequence",
        ));
    }
    model.set_standardizer(Standardizer::fit(inputs))?;
    let states = model.drive(&vec![T::zero(); model.n_reservoir()], inputs)?;
    let n = model.n_reservoir();
    let m = model.input_dim;
    let rows = inputs.len() - washout;
    let g = DMatrix::from_fn(rows, n, |i, j| states.state(i + washout)[j].as_f64());
    let u = DMatrix::from_fn(rows, m, |i, j| targets.state(i + washout)[j].as_f64());
    let w_out_t = ridge_solve(&g, &u, model.spec.ridge_lambda)?;

    let pred = &g * &w_out_t;
    let train_rmse = ((&pred - &u).norm_squared() / (rows * m) as f64).sqrt();
    let mut w_out = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            w_out.push(T::lit(w_out_t[(j, i)]));
        }
    }
    let state_sd = (0..n)
        .map(|j| {
            let col = g.column(j);
            let mean = col.mean();
            (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64).sqrt()
        })
        .collect();
    model.set_readout(w_out, state_sd)?;
    Ok(ReadoutReport {
        samples: rows,
        washout,
        train_rmse,
    })
}

/// `(GᵀG + λI)⁻¹ GᵀU` by Cholesky; an LU fallback covers the λ = 0 case.
pub fn ridge_solve(g: &DMatrix<f64>, u: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let n = g.ncols();
    let mut gram = g.transpose() * g;
    for i in 0..n {
        gram[(i, i)] += lambda;
    }
    let rhs = g.transpose() * u;
    if let Some(ch) = gram.clone().cholesky() {
        let x = ch.solve(&rhs);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    gram.lu()
        .solve(&rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| {
            Error::Singular(format!(
                "ridge normal equations are rank deficient with λ = {lambda}; use λ > 0"
            ))
        })
}

/// Strong-constraint window problem with the reservoir state as control
/// variable and `H = S·W_out`. `B` is diagonal with SDs
/// `b_scale · state_sd` (floored at `sd_floor`).
pub fn reservoir_window_problem<'m, T: Scalar>(
    model: &'m ReservoirModel<T>,
    background: Vec<T>,
    obs: ObservationBatch<T>,
    window_steps: usize,
    b_scale: f64,
    sd_floor: f64,
) -> Result<WindowProblem<'m, T, ReservoirModel<T>>> {
    let b = reservoir_background_cov(model, b_scale, sd_floor)?;
    let h = ObsOperator::through(model.readout_map()?, obs.indices.clone());
    WindowProblem::with_operator(model, background, b, obs, window_steps, h)
}

pub fn reservoir_background_cov<T: Scalar>(
    model: &ReservoirModel<T>,
    b_scale: f64,
    sd_floor: f64,
) -> Result<GaussianDiag<T>> {
    if !model.is_trained() {
        return Err(Error::contract("reservoir readout has not been trained"));
    }
    let sd: Vec<T> = model
        .state_sd
        .iter()
        .map(|&s| T::lit((b_scale * s).max(sd_floor)))
        .collect();
    GaussianDiag::from_sd(&sd)
}

//! Ten-node chain experiments: the controller-order sweep and the
//! comparison of design methods under locality and delay constraints.

use std::fmt::Write as _;
use std::path::PathBuf;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clsyn::{synthesize_clmaps, ClosedLoopMaps, LqrWeights};
use crate::error::{Error, Result};
use crate::fir::LtiSystem;
use crate::implsyn::{
    closed_loop_difference, compute_delta_c_raw, default_eval_horizon, lambda_schedule,
    ImplDiagnostics, ImplSynthOptions, ImplementationMatrices,
};
use crate::evalsim::normalized_lqr_cost;
use crate::linalg::spectral_radius;
use crate::sparsity::{
    chain_topology, delay_mask, delay_penalty_weights, locality_mask, locality_penalty_weights,
    PenaltyWeights, SparsityMask, Topology,
};
use crate::stability::{
    build_internal_dynamics, distributed_stability_check, internal_dynamics_of, Verdict,
};

/// Tridiagonal chain: `diag_end` at the two corner diagonal entries,
/// `diag_mid` on the interior diagonal, `offdiag` next to the diagonal.
/// `B` has one unit column per actuated node (1-based labels).
pub fn build_chain_system(
    n: usize,
    actuated_nodes: &[usize],
    diag_end: f64,
    diag_mid: f64,
    offdiag: f64,
) -> Result<LtiSystem> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("chain needs n >= 2, got {n}")));
    }
    if actuated_nodes.is_empty() {
        return Err(Error::InvalidArgument("at least one actuator is required".into()));
    }
    if let Some(&bad) = actuated_nodes.iter().find(|&&p| p == 0 || p > n) {
        return Err(Error::InvalidArgument(format!("actuator node {bad} outside 1..={n}")));
    }
    let a = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            if i == 0 || i == n - 1 {
                diag_end
            } else {
                diag_mid
            }
        } else if i.abs_diff(j) == 1 {
            offdiag
        } else {
            0.0
        }
    });
    let mut b = DMatrix::zeros(n, actuated_nodes.len());
    for (c, &p) in actuated_nodes.iter().enumerate() {
        b[(p - 1, c)] = 1.0;
    }
    LtiSystem::new(a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub n: usize,
    pub actuated_nodes: Vec<usize>,
    pub diag_end: f64,
    pub diag_mid: f64,
    pub offdiag: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n: 10,
            actuated_nodes: vec![3, 6, 10],
            diag_end: 0.6,
            diag_mid: 0.2,
            offdiag: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub enabled: bool,
    /// Hop radius; omit for no locality constraint.
    pub locality: Option<usize>,
    /// Hops per time step; omit for no delay constraint.
    pub comm_speed: Option<f64>,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            locality: Some(1),
            comm_speed: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Closed-loop FIR horizon `T`.
    pub horizon: usize,
    /// Controller orders of the sweep.
    pub orders: Vec<usize>,
    pub lambda: f64,
    pub lambda_factor: f64,
    pub l1_weight: f64,
    pub delay_penalty: bool,
    pub locality_penalty: bool,
    pub penalty_scale: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            orders: (2..=25).collect(),
            lambda: 0.01,
            lambda_factor: 10.0,
            l1_weight: 0.01,
            delay_penalty: false,
            locality_penalty: false,
            penalty_scale: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    /// `Q = q·I`.
    pub q: f64,
    /// `R = r·I`.
    pub r: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self { q: 1.0, r: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub processors: usize,
    pub transient_bound: f64,
    pub max_iterations: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            processors: 10,
            transient_bound: crate::stability::DEFAULT_TRANSIENT_BOUND,
            max_iterations: crate::stability::DEFAULT_MAX_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Treat an infeasible constrained closed-loop synthesis as the
    /// expected outcome.
    pub expect_infeasible: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            expect_infeasible: true,
        }
    }
}

/// Experiment description, read from TOML. Every section and key is
/// optional and defaults to the ten-node chain setup.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub synthesis: SynthesisConfig,
    pub mask: MaskConfig,
    pub weights: WeightsConfig,
    pub stability: StabilityConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Check everything the solvers would reject, before any solve.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let s = &self.synthesis;
        if s.horizon == 0 {
            return bad("synthesis.horizon must be at least 1".into());
        }
        if s.orders.is_empty() || s.orders.contains(&0) {
            return bad("synthesis.orders must be nonempty and positive".into());
        }
        if !(s.lambda >= 0.0 && s.l1_weight >= 0.0 && s.penalty_scale >= 0.0) {
            return bad("synthesis weights must be nonnegative".into());
        }
        if !(s.lambda_factor > 1.0) {
            return bad("synthesis.lambda_factor must exceed 1".into());
        }
        if !(self.weights.q > 0.0 && self.weights.r > 0.0) {
            return bad("weights.q and weights.r must be positive".into());
        }
        let st = &self.stability;
        if !(st.transient_bound > 0.0) || st.max_iterations == 0 || st.processors == 0 {
            return bad("stability settings must be positive".into());
        }
        self.system()?;
        let topo = self.topology()?;
        let max_order = s.orders.iter().copied().max().unwrap().max(s.horizon);
        if let Some(mask) = self.mask(&topo, max_order)? {
            if !mask.admits_identity() {
                return Err(Error::MaskRejectsIdentity);
            }
        }
        Ok(())
    }

    pub fn system(&self) -> Result<LtiSystem> {
        let c = &self.system;
        build_chain_system(c.n, &c.actuated_nodes, c.diag_end, c.diag_mid, c.offdiag)
    }

    pub fn topology(&self) -> Result<Topology> {
        chain_topology(self.system.n, &self.system.actuated_nodes)
    }

    /// `Q = q·I`, `R = r·I` sized for `sys`.
    pub fn weights_for(&self, sys: &LtiSystem) -> LqrWeights {
        let (n, m) = (sys.n(), sys.m());
        LqrWeights::new(
            DMatrix::identity(n, n) * self.weights.q,
            DMatrix::identity(m, m) * self.weights.r,
        )
        .expect("positive multiples of the identity")
    }

    pub fn weights(&self) -> Result<LqrWeights> {
        Ok(self.weights_for(&self.system()?))
    }

    /// Configured sparsity for terms `1..=horizon`, `None` when disabled.
    pub fn mask(&self, topo: &Topology, horizon: usize) -> Result<Option<SparsityMask>> {
        let c = &self.mask;
        if !c.enabled {
            return Ok(None);
        }
        let mut mask = SparsityMask::unrestricted(topo.n(), topo.m(), horizon);
        if let Some(l) = c.locality {
            mask = mask.intersect(&locality_mask(topo, l, horizon))?;
        }
        if let Some(speed) = c.comm_speed {
            mask = mask.intersect(&delay_mask(topo, speed, horizon)?)?;
        }
        Ok(Some(mask))
    }

    pub fn penalties(&self, topo: &Topology, horizon: usize) -> Result<Option<PenaltyWeights>> {
        let s = &self.synthesis;
        let mut acc: Option<PenaltyWeights> = None;
        if s.delay_penalty {
            acc = Some(delay_penalty_weights(topo, horizon));
        }
        if s.locality_penalty {
            let w = locality_penalty_weights(topo, horizon);
            acc = Some(match acc {
                Some(a) => a.add(&w)?,
                None => w,
            });
        }
        Ok(acc)
    }

    pub fn impl_options(&self, topo: &Topology, tc: usize) -> Result<ImplSynthOptions> {
        Ok(ImplSynthOptions {
            lambda: self.synthesis.lambda,
            l1_weight: self.synthesis.l1_weight,
            penalties: self.penalties(topo, tc)?,
            penalty_scale: self.synthesis.penalty_scale,
            ..ImplSynthOptions::default()
        })
    }
}

/// Induced ℓ∞ norm of the stacked `[Rc; Mc]`.
pub fn implementation_l1_norm(imp: &ImplementationMatrices) -> f64 {
    imp.stacked().norm_l1()
}

/// [`closed_loop_difference`] from `horizon`, doubling the horizon while
/// the `Δc⁻¹` tail has not decayed, up to `10 * horizon`.
pub fn adaptive_difference(
    cl: &ClosedLoopMaps,
    imp: &ImplementationMatrices,
    sys: &LtiSystem,
    horizon: usize,
) -> Result<(f64, f64)> {
    let cap = 10 * horizon;
    let mut h = horizon;
    loop {
        match closed_loop_difference(cl, imp, sys, h) {
            Err(Error::TailNotDecaying { .. }) if h < cap => h = (2 * h).min(cap),
            r => return r,
        }
    }
}

/// Everything reported about one synthesized implementation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub implementation: ImplementationMatrices,
    pub tc: usize,
    pub lambda: f64,
    pub lambda_attempts: usize,
    /// Radius of `A_z` after flushing cancellation residue in `Δc`.
    pub spectral_radius: f64,
    /// Radius of `A_z` built from the unflushed `Δc`.
    pub spectral_radius_raw: f64,
    pub stability_verdict: Verdict,
    pub stability_iterations: usize,
    pub l1_norm: f64,
    pub dx: f64,
    pub du: f64,
    pub normalized_cost: f64,
    /// Present for synthesized (not self-implemented) controllers.
    pub diagnostics: Option<ImplDiagnostics>,
}

fn evaluate(
    cfg: &ExperimentConfig,
    sys: &LtiSystem,
    cl: &ClosedLoopMaps,
    implementation: ImplementationMatrices,
    lambda: f64,
    lambda_attempts: usize,
    diagnostics: Option<ImplDiagnostics>,
) -> Result<Evaluation> {
    let tc = implementation.order();
    let dynamics = build_internal_dynamics(sys, &implementation)?;
    let raw = internal_dynamics_of(&compute_delta_c_raw(sys, &implementation)?);
    let st = &cfg.stability;
    let check = distributed_stability_check(
        &dynamics,
        st.processors.min(dynamics.dim()),
        st.transient_bound,
        st.max_iterations,
    )?;
    let horizon = default_eval_horizon(cl.horizon(), tc);
    let (dx, du) = adaptive_difference(cl, &implementation, sys, horizon)?;
    Ok(Evaluation {
        tc,
        lambda,
        lambda_attempts,
        spectral_radius: dynamics.spectral_radius()?,
        spectral_radius_raw: spectral_radius(raw.a_z())?,
        stability_verdict: check.outcome.verdict,
        stability_iterations: check.outcome.iterations,
        l1_norm: implementation_l1_norm(&implementation),
        dx,
        du,
        normalized_cost: normalized_lqr_cost(sys, &implementation, &cfg.weights_for(sys), horizon)?,
        implementation,
        diagnostics,
    })
}

/// Relaxed synthesis at order `tc` with the λ escalation schedule; an
/// implementation is accepted once the norm-power check certifies it.
pub fn two_step(
    cfg: &ExperimentConfig,
    sys: &LtiSystem,
    cl: &ClosedLoopMaps,
    tc: usize,
    mask: Option<&SparsityMask>,
) -> Result<Evaluation> {
    let topo = cfg.topology()?;
    let opts = cfg.impl_options(&topo, tc)?;
    let full = SparsityMask::unrestricted(sys.n(), sys.m(), tc);
    let mask = mask.unwrap_or(&full);
    let st = &cfg.stability;
    let out = lambda_schedule(
        sys,
        cl,
        tc,
        mask,
        &opts,
        cfg.synthesis.lambda,
        cfg.synthesis.lambda_factor,
        |s| {
            let d = internal_dynamics_of(&s.delta_c);
            let r = crate::stability::norm_power_certify(d.a_z(), st.transient_bound, st.max_iterations)?;
            Ok(r.verdict == Verdict::Certified)
        },
    )?;
    evaluate(
        cfg,
        sys,
        cl,
        out.synthesis.implementation,
        out.lambda_used,
        out.attempts,
        Some(out.synthesis.diagnostics),
    )
}

/// Unconstrained closed-loop design, implemented by itself.
pub fn self_implementation(
    cfg: &ExperimentConfig,
    sys: &LtiSystem,
    cl: &ClosedLoopMaps,
) -> Result<Evaluation> {
    evaluate(cfg, sys, cl, ImplementationMatrices::from_closed_loop(cl)?, 0.0, 0, None)
}

#[derive(Debug, Clone)]
pub struct Fig2Result {
    pub baseline: Evaluation,
    pub rows: Vec<Evaluation>,
}

const FIG2_HEADER: &str = "controller,tc,dx_h2_rel,du_h2_rel,spectral_radius,spectral_radius_raw,l1_norm,normalized_cost,lambda,stability_iterations\n";

fn fig2_line(s: &mut String, label: &str, e: &Evaluation) {
    let _ = writeln!(
        s,
        "{label},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:e},{}",
        e.tc,
        e.dx,
        e.du,
        e.spectral_radius,
        e.spectral_radius_raw,
        e.l1_norm,
        e.normalized_cost,
        e.lambda,
        e.stability_iterations
    );
}

impl Fig2Result {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(FIG2_HEADER);
        fig2_line(&mut s, "original", &self.baseline);
        for e in &self.rows {
            fig2_line(&mut s, "two_step", e);
        }
        s
    }
}

/// Unconstrained two-step designs for every configured order, plus the
/// self-implemented original controller.
pub fn run_fig2_sweep(cfg: &ExperimentConfig) -> Result<Fig2Result> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let cl = synthesize_clmaps(&sys, cfg.synthesis.horizon, &cfg.weights()?, None)?;
    let baseline = self_implementation(cfg, &sys, &cl)?;
    let rows: Vec<Result<Evaluation>> = cfg
        .synthesis
        .orders
        .par_iter()
        .map(|&tc| two_step(cfg, &sys, &cl, tc, None))
        .collect();
    Ok(Fig2Result {
        baseline,
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Table1Entry {
    Computed(Evaluation),
    Infeasible(String),
    NotComputed(&'static str),
}

#[derive(Debug, Clone)]
pub struct Table1Row {
    pub method: &'static str,
    pub entry: Table1Entry,
}

#[derive(Debug, Clone)]
pub struct Table1Result {
    pub rows: Vec<Table1Row>,
}

impl Table1Result {
    pub fn row(&self, method: &str) -> Option<&Table1Entry> {
        self.rows.iter().find(|r| r.method == method).map(|r| &r.entry)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "method,status,tc,normalized_cost,spectral_radius,spectral_radius_raw,l1_norm,lambda,stability_iterations\n",
        );
        for r in &self.rows {
            match &r.entry {
                Table1Entry::Computed(e) => {
                    let _ = writeln!(
                        s,
                        "{},ok,{},{:.6e},{:.6e},{:.6e},{:.6e},{:e},{}",
                        r.method,
                        e.tc,
                        e.normalized_cost,
                        e.spectral_radius,
                        e.spectral_radius_raw,
                        e.l1_norm,
                        e.lambda,
                        e.stability_iterations
                    );
                }
                Table1Entry::Infeasible(_) => {
                    let _ = writeln!(s, "{},infeasible,,,,,,,", r.method);
                }
                Table1Entry::NotComputed(why) => {
                    let _ = writeln!(s, "{},{why},,,,,,,", r.method);
                }
            }
        }
        s
    }
}

pub const FIR_CENTRALIZED: &str = "fir_centralized";
pub const CONSTRAINED_CL_MAP: &str = "constrained_cl_map";
pub const VIRTUALLY_LOCAL: &str = "virtually_local";
pub const TWO_STEP_FULL: &str = "two_step_tc_T";
pub const TWO_STEP_LOW: &str = "two_step_tc_2";

/// Compare the centralized FIR controller, a closed-loop design under the
/// configured mask, and two-step designs of order `T` and 2 under the same
/// mask.
pub fn run_table1(cfg: &ExperimentConfig) -> Result<Table1Result> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let topo = cfg.topology()?;
    let w = cfg.weights()?;
    let t = cfg.synthesis.horizon;
    let cl = synthesize_clmaps(&sys, t, &w, None)?;
    let mut rows = vec![Table1Row {
        method: FIR_CENTRALIZED,
        entry: Table1Entry::Computed(self_implementation(cfg, &sys, &cl)?),
    }];
    let cl_mask = cfg.mask(&topo, t)?;
    let constrained = match synthesize_clmaps(&sys, t, &w, cl_mask.as_ref()) {
        Err(e @ Error::Infeasible { .. }) => Table1Entry::Infeasible(e.to_string()),
        Err(e) => return Err(e),
        Ok(c) => Table1Entry::Computed(self_implementation(cfg, &sys, &c)?),
    };
    rows.push(Table1Row {
        method: CONSTRAINED_CL_MAP,
        entry: constrained,
    });
    rows.push(Table1Row {
        method: VIRTUALLY_LOCAL,
        entry: Table1Entry::NotComputed("external baseline - not computed"),
    });
    let designs: Vec<(&'static str, usize)> = vec![(TWO_STEP_FULL, t), (TWO_STEP_LOW, 2)];
    let evals: Vec<Result<Evaluation>> = designs
        .par_iter()
        .map(|&(_, tc)| {
            let mask = cfg.mask(&topo, tc)?;
            two_step(cfg, &sys, &cl, tc, mask.as_ref())
        })
        .collect();
    for ((method, _), e) in designs.into_iter().zip(evals) {
        rows.push(Table1Row {
            method,
            entry: Table1Entry::Computed(e?),
        });
    }
    Ok(Table1Result { rows })
}

//! Built-in benchmark scenarios with closed-form oracles and expected
//! verdicts, plus a deterministic random-system generator.
//!
//! Each scenario bundles a system, its analysis grids, optional closed-form
//! transition formulas (in the two variables `t`, `s`) and a table of
//! expected verdicts. `run_scenario` executes the standard pipeline and
//! compares against the table, recording per-stage results without aborting
//! on failures.

use crate::domain::TimeDomain;
use crate::duality::verify_gramian_identities;
use crate::envelope::{
    certify_gramian_envelope, certify_nues, fit_growth_envelope, forward_pairs, linspace,
    symmetric_pairs, Certificate, FitConfig, GrowthEnvelope, Grids, NuesDirection, NuesEnvelope,
    RateCaps, VerdictStatus,
};
use crate::error::{Error, Result};
use crate::expr::Formula2;
use crate::gramian::{gramian_by_kind, observability_gramian, GramianKind, GramianOptions};
use crate::matfun::MatrixFunction;
use crate::propagator::{transition, TransitionQuery};
use crate::system::{LtvSystem, SystemConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Closed-form transition matrix in the variables `t` (to) and `s` (from).
#[derive(Debug, Clone)]
pub struct TransitionOracle {
    pub n: usize,
    /// Row-major entries.
    pub entries: Vec<Formula2>,
}

impl TransitionOracle {
    fn parse(n: usize, grid: &[&str]) -> Self {
        assert_eq!(grid.len(), n * n);
        TransitionOracle {
            n,
            entries: grid.iter().map(|s| Formula2::parse(s).unwrap()).collect(),
        }
    }

    pub fn eval(&self, t: f64, s: f64) -> Result<nalgebra::DMatrix<f64>> {
        let mut out = nalgebra::DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for c in 0..self.n {
                out[(r, c)] = self.entries[r * self.n + c].eval(t, s)?;
            }
        }
        Ok(out)
    }
}

/// Expected verdicts of a scenario; absent entries are not checked.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExpectedVerdicts {
    /// Gramian positive definite at every sampled window (grid-scoped).
    pub complete: Option<bool>,
    pub uniform: Option<VerdictStatus>,
    pub nonuniform: Option<VerdictStatus>,
    /// Nonuniform bounded growth of the plant.
    pub growth: Option<VerdictStatus>,
}

/// One benchmark scenario.
pub struct Scenario {
    pub name: String,
    /// Neutral description of what the scenario exercises.
    pub note: String,
    pub system: LtvSystem,
    pub grids: Grids,
    pub oracle: Option<TransitionOracle>,
    pub expected: ExpectedVerdicts,
    /// Pinned refutation pairs `(t, s)` whose violation must grow.
    pub pinned_witnesses: Vec<(f64, f64)>,
    /// Closed-loop plant and stability target demonstrating detectability.
    pub closed_loop_target: Option<(MatrixFunction, NuesEnvelope)>,
    /// Check the constructive observability sandwich from a fitted growth
    /// envelope (output weight must be the identity).
    pub constructive_bounds: bool,
    /// Run a small observer synthesis over this window.
    pub synthesis_window: Option<(f64, f64)>,
}

impl Scenario {
    fn observes(&self) -> bool {
        self.system.output().is_some()
    }

    fn gramian_side(&self) -> (GramianKind, GramianKind) {
        if self.observes() {
            (GramianKind::M, GramianKind::N)
        } else {
            (GramianKind::W, GramianKind::K)
        }
    }
}

fn mf(grid: &[&[&str]]) -> MatrixFunction {
    let grid: Vec<Vec<String>> = grid
        .iter()
        .map(|row| row.iter().map(|s| s.to_string()).collect())
        .collect();
    MatrixFunction::parse(&grid).unwrap()
}

fn grids(t: Vec<f64>, sigma: Vec<f64>, pair_points: Vec<f64>, max_sep: f64) -> Grids {
    Grids {
        pairs: symmetric_pairs(&pair_points, max_sep),
        t,
        sigma,
    }
}

/// Builds the full scenario corpus in a stable order.
pub fn scenarios() -> Vec<Scenario> {
    let mut out = Vec::new();

    // constructive observability bounds for a plant with fitted growth and
    // unit output weight
    out.push(Scenario {
        name: "example1-family".into(),
        note: "oscillatory scalar plant with unit output; observability gauges \
               derived from the fitted growth envelope"
            .into(),
        system: LtvSystem::new(
            "oscillatory-unit-output",
            mf(&[&["-t*sin(t)"]]),
            None,
            Some(mf(&[&["1"]])),
            None,
            TimeDomain::real_line(),
        )
        .unwrap(),
        grids: grids(
            linspace(-5.0, 5.0, 21),
            vec![1.0, 2.0, 4.0],
            linspace(-9.5, 9.5, 77),
            4.0,
        ),
        oracle: Some(TransitionOracle::parse(
            1,
            &["exp(t*cos(t) - s*cos(s) + sin(s) - sin(t))"],
        )),
        expected: ExpectedVerdicts {
            nonuniform: Some(VerdictStatus::Certified),
            growth: Some(VerdictStatus::Certified),
            complete: Some(true),
            ..Default::default()
        },
        pinned_witnesses: Vec::new(),
        closed_loop_target: None,
        constructive_bounds: true,
        synthesis_window: None,
    });

    // scalar decay x' = -x/t, y = x: uniformly observable on [1, inf)
    out.push(Scenario {
        name: "example2-uco".into(),
        note: "scalar decay -x/t with full state output; uniformly completely \
               observable, M(t,t+1) = t/(t+1), N(t,t+1) = (t+1)/t"
            .into(),
        system: LtvSystem::from_json(
            r#"{
                "name": "scalar-decay",
                "n": 1,
                "A": [["-1/t"]],
                "C": [["1"]],
                "domain": {"min": 1, "max": 50, "excluded": [0]}
            }"#,
        )
        .unwrap(),
        grids: grids(
            linspace(1.0, 46.0, 46),
            vec![0.5, 1.0, 2.0, 4.0],
            linspace(1.0, 21.0, 41),
            8.0,
        ),
        oracle: Some(TransitionOracle::parse(1, &["s/t"])),
        expected: ExpectedVerdicts {
            complete: Some(true),
            uniform: Some(VerdictStatus::Certified),
            nonuniform: Some(VerdictStatus::Certified),
            growth: Some(VerdictStatus::Certified),
        },
        pinned_witnesses: Vec::new(),
        closed_loop_target: None,
        constructive_bounds: false,
        synthesis_window: Some((1.0, 20.0)),
    });

    // the reflected pair (-A(-t), -C(-t)) of the scalar decay benchmark,
    // nonuniformly observable on the mirrored half line
    out.push(Scenario {
        name: "example2-dual".into(),
        note: "mirrored scalar decay pair (-1/t, -1) on (-inf, -1]; \
               observability carries over to the reflected domain"
            .into(),
        system: LtvSystem::from_json(
            r#"{
                "name": "scalar-decay-reflected",
                "n": 1,
                "A": [["-1/t"]],
                "C": [["-1"]],
                "domain": {"min": -50, "max": -1, "excluded": [0]}
            }"#,
        )
        .unwrap(),
        grids: grids(
            linspace(-46.0, -5.0, 42),
            vec![0.5, 1.0, 2.0, 4.0],
            linspace(-21.0, -1.0, 41),
            8.0,
        ),
        oracle: Some(TransitionOracle::parse(1, &["s/t"])),
        expected: ExpectedVerdicts {
            complete: Some(true),
            uniform: Some(VerdictStatus::Certified),
            nonuniform: Some(VerdictStatus::Certified),
            growth: Some(VerdictStatus::Certified),
        },
        pinned_witnesses: Vec::new(),
        closed_loop_target: None,
        constructive_bounds: false,
        synthesis_window: None,
    });

    // control pair with a fast-decaying input coefficient: controllable at
    // every sampled window but neither uniformly nor nonuniformly so
    out.push(Scenario {
        name: "example3-cc-only".into(),
        note: "scalar control pair (-t, sqrt(2(t-1)) e^{-t+1/2}); window \
               Gramians positive but their rates depend on the window length"
            .into(),
        system: LtvSystem::from_json(
            r#"{
                "name": "fast-decay-input",
                "n": 1,
                "A": [["-t"]],
                "B": [["sqrt(2*(t-1))*exp(-t+0.5)"]],
                "domain": {"min": 1, "max": 24}
            }"#,
        )
        .unwrap(),
        grids: grids(
            linspace(1.0, 16.0, 16),
            vec![0.5, 1.0, 2.0, 4.0],
            linspace(1.0, 13.0, 25),
            4.0,
        ),
        oracle: Some(TransitionOracle::parse(1, &["exp((s^2 - t^2)/2)"])),
        expected: ExpectedVerdicts {
            complete: Some(true),
            uniform: Some(VerdictStatus::Refuted),
            nonuniform: Some(VerdictStatus::Refuted),
            growth: None,
        },
        pinned_witnesses: Vec::new(),
        closed_loop_target: None,
        constructive_bounds: false,
        synthesis_window: None,
    });

    // the adjoint observed pair of the previous scenario
    out.push(Scenario {
        name: "example3-co-only".into(),
        note: "observed pair (t, -sqrt(2(t-1)) e^{-t+1/2}); completely \
               observable at sampled windows, neither uniformly nor \
               nonuniformly"
            .into(),
        system: LtvSystem::from_json(
            r#"{
                "name": "fast-decay-output",
                "n": 1,
                "A": [["t"]],
                "C": [["-(sqrt(2*(t-1))*exp(-t+0.5))"]],
                "domain": {"min": 1, "max": 24}
            }"#,
        )
        .unwrap(),
        grids: grids(
            linspace(1.0, 16.0, 16),
            vec![0.5, 1.0, 2.0, 4.0],
            linspace(1.0, 13.0, 25),
            4.0,
        ),
        oracle: Some(TransitionOracle::parse(1, &["exp((t^2 - s^2)/2)"])),
        expected: ExpectedVerdicts {
            complete: Some(true),
            uniform: Some(VerdictStatus::Refuted),
            nonuniform: Some(VerdictStatus::Refuted),
            growth: None,
        },
        pinned_witnesses: Vec::new(),
        closed_loop_target: None,
        constructive_bounds: false,
        synthesis_window: None,
    });

    // oscillatory plant: nonuniformly observable with linear rate, but the
    // uniform property fails along the pinned sequence
    let two_pi = 2.0 * std::f64::consts::PI;
    let pinned: Vec<(f64, f64)> = (1..=3)
        .map(|n| {
            let n = n as f64;
            (n * two_pi, 1.5 * std::f64::consts::PI + (n - 1.0) * two_pi)
        })
        .collect();
    out.push(Scenario {
        name: "example4-nuco-not-uco".into(),
        note: "scalar plant -t sin(t) with unit output; nonuniformly \
               observable with rate near 2, uniform observability fails along \
               the peak sequence t = 2 n pi"
            .into(),
        system: LtvSystem::from_json(
            r#"{
                "name": "oscillatory",
                "n": 1,
                "A": [["-t*sin(t)"]],
                "C": [["1"]],
                "domain": {"min": -20, "max": 20}
            }"#,
        )
        .unwrap(),
        grids: grids(
            linspace(-8.0, 8.0, 33),
            vec![0.5, 1.0, 2.0, 4.0],
            linspace(-20.0, 20.0, 41),
            8.0,
        ),
        oracle: Some(TransitionOracle::parse(
            1,
            &["exp(t*cos(t) - s*cos(s) + sin(s) - sin(t))"],
        )),
        expected: ExpectedVerdicts {
            complete: Some(true),
            uniform: Some(VerdictStatus::Refuted),
            nonuniform: Some(VerdictStatus::Certified),
            growth: Some(VerdictStatus::Certified),
        },
        pinned_witnesses: pinned,
        closed_loop_target: None,
        constructive_bounds: false,
        synthesis_window: None,
    });

    // planar plant with one exploding mode visible through the output: the
    // growth condition fails (cubic exponent), yet the hand gain (0, 2 t^2)
    // makes the error dynamics -t^2 I, stable against an explicit target
    out.push(Scenario {
        name: "counterexample-detectable-not-nuco".into(),
        note: "planar diag(-t^2, t^2) with output of the second state; no \
               linear-in-|s| growth envelope exists, but output injection \
               yields error dynamics -t^2 I with an explicit stability target"
            .into(),
        system: LtvSystem::from_json(
            r#"{
                "name": "planar-cubic",
                "n": 2,
                "A": [["-(t^2)", "0"], ["0", "t^2"]],
                "C": [["0", "1"]]
            }"#,
        )
        .unwrap(),
        grids: grids(
            linspace(-6.0, 6.0, 25),
            vec![0.5, 1.0],
            linspace(-10.0, 10.0, 41),
            2.0,
        ),
        oracle: Some(TransitionOracle::parse(
            2,
            &[
                "exp((s^3 - t^3)/3)",
                "0",
                "0",
                "exp((t^3 - s^3)/3)",
            ],
        )),
        expected: ExpectedVerdicts {
            complete: None,
            uniform: Some(VerdictStatus::Refuted),
            nonuniform: Some(VerdictStatus::Refuted),
            growth: Some(VerdictStatus::Refuted),
        },
        pinned_witnesses: vec![(5.0, 4.0), (7.0, 6.0), (9.0, 8.0), (11.0, 10.0)],
        closed_loop_target: Some((
            mf(&[&["-(t^2)", "0"], &["0", "-(t^2)"]]),
            NuesEnvelope {
                m: 3.0f64.exp(),
                beta: 1.0 / 3.0,
                delta: 1.0 / 3.0,
                direction: NuesDirection::Forward,
            },
        )),
        constructive_bounds: false,
        synthesis_window: None,
    });

    out
}

/// Scenario names and notes in the corpus order.
pub fn list_scenarios() -> Vec<(String, String)> {
    scenarios()
        .into_iter()
        .map(|s| (s.name, s.note))
        .collect()
}

pub fn find_scenario(name: &str) -> Result<Scenario> {
    scenarios()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::UnknownScenario(name.to_string()))
}

/// Optional overrides for a scenario run: a replacement system config plus
/// grid fields.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScenarioOverrides {
    #[serde(default)]
    pub system: Option<SystemConfig>,
    #[serde(default)]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub pair_points: Option<Vec<f64>>,
    #[serde(default)]
    pub pair_max_sep: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub stages: Vec<StageResult>,
    pub pass: bool,
}

fn combine(a: VerdictStatus, b: VerdictStatus) -> VerdictStatus {
    use VerdictStatus::*;
    match (a, b) {
        (Refuted, _) | (_, Refuted) => Refuted,
        (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
        _ => Certified,
    }
}

/// Constructive observability sandwich: with a fitted growth envelope
/// `(K0, a, eta)` and unit output weight, the window Gramian must satisfy
///
/// ```text
/// e^{-2 eta |t|} theta0(sigma) <= M(t, t+sigma) <= e^{2 eta |t|} theta1(sigma)
/// theta0 = [1 - e^{-2(a+eta) sigma}] / (2 K0^2 (a+eta))
/// theta1 = K0^2 [e^{2 a sigma} - 1] / (2 a)
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstructiveBoundsReport {
    pub envelope: GrowthEnvelope,
    /// `(t, sigma, lower, lambda_min, lambda_max, upper)` per grid point.
    pub rows: Vec<(f64, f64, f64, f64, f64, f64)>,
    /// Smallest relative margin over both sides.
    pub min_margin: f64,
    pub pass: bool,
}

pub fn constructive_observability_bounds(
    sys: &LtvSystem,
    growth: &GrowthEnvelope,
    t_grid: &[f64],
    sigma_grid: &[f64],
    margin_floor: f64,
    opts: &GramianOptions,
) -> Result<ConstructiveBoundsReport> {
    let (k0, a, eta) = (growth.k0, growth.a, growth.eta);
    let theta0 =
        |sigma: f64| (1.0 - (-2.0 * (a + eta) * sigma).exp()) / (2.0 * k0 * k0 * (a + eta));
    let theta1 = |sigma: f64| k0 * k0 * ((2.0 * a * sigma).exp() - 1.0) / (2.0 * a);
    let mut rows = Vec::new();
    let mut min_margin = f64::INFINITY;
    for &sigma in sigma_grid {
        for &t in t_grid {
            if sys.domain().check_span(t, t + sigma).is_err() {
                continue;
            }
            let g = observability_gramian(sys, t, t + sigma, opts)?;
            let lower = (-2.0 * eta * t.abs()).exp() * theta0(sigma);
            let upper = (2.0 * eta * t.abs()).exp() * theta1(sigma);
            let lmin = g.lambda_min_clamped();
            let lmax = g.lambda_max;
            min_margin = min_margin
                .min((lmin - lower) / lower.max(1e-300))
                .min((upper - lmax) / upper.max(1e-300));
            rows.push((t, sigma, lower, lmin, lmax, upper));
        }
    }
    Ok(ConstructiveBoundsReport {
        envelope: *growth,
        rows,
        min_margin,
        pass: min_margin >= -margin_floor,
    })
}

/// Runs the scenario's standard pipeline and compares against the expected
/// verdict table. Stage failures are recorded; the report is always produced.
pub fn run_scenario(name: &str, overrides: Option<&ScenarioOverrides>) -> Result<ScenarioReport> {
    let mut scenario = find_scenario(name)?;
    let mut seed = 0u64;
    if let Some(o) = overrides {
        if let Some(sys) = &o.system {
            scenario.system = LtvSystem::from_config(sys)?;
        }
        if let Some(t) = &o.t_grid {
            scenario.grids.t = t.clone();
        }
        if let Some(s) = &o.sigma_grid {
            scenario.grids.sigma = s.clone();
        }
        if o.pair_points.is_some() || o.pair_max_sep.is_some() {
            let points = o
                .pair_points
                .clone()
                .unwrap_or_else(|| scenario.grids.t.clone());
            let sep = o.pair_max_sep.unwrap_or(8.0);
            scenario.grids.pairs = symmetric_pairs(&points, sep);
        }
        seed = o.seed.unwrap_or(0);
    }
    let sys = &scenario.system;
    let opts = GramianOptions::default();
    let config = FitConfig::default();
    let mut stages: Vec<StageResult> = Vec::new();
    let mut push = |stages: &mut Vec<StageResult>, stage: &str, outcome: Result<(bool, String)>| {
        match outcome {
            Ok((pass, detail)) => stages.push(StageResult {
                stage: stage.into(),
                pass,
                detail,
            }),
            Err(e) => stages.push(StageResult {
                stage: stage.into(),
                pass: false,
                detail: format!("stage failed: {e}"),
            }),
        }
    };

    // closed-form transition oracle against the propagator
    if let Some(oracle) = &scenario.oracle {
        let outcome = (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (lo, hi) = (
                scenario.grids.t[0],
                *scenario.grids.t.last().unwrap(),
            );
            let mut worst = 0.0f64;
            for _ in 0..200 {
                let s = rng.random_range(lo..hi);
                let t = rng.random_range((s - 4.0).max(lo)..(s + 4.0).min(hi));
                if sys.domain().check_span(s, t).is_err() {
                    continue;
                }
                let numeric =
                    transition(sys.plant(), sys.domain(), TransitionQuery::new(s, t))?;
                let exact = oracle.eval(t, s)?;
                worst = worst.max((&numeric - &exact).norm() / exact.norm().max(1e-12));
            }
            Ok((worst <= 1e-8, format!("max relative deviation {worst:.3e}")))
        })();
        push(&mut stages, "transition-oracle", outcome);
    }

    let (base_kind, congruent_kind) = scenario.gramian_side();

    // positive definiteness of the Gramian at every sampled window
    if let Some(expected) = scenario.expected.complete {
        let outcome = (|| {
            let mut all_positive = true;
            let mut smallest = f64::INFINITY;
            for &sigma in &scenario.grids.sigma {
                for &t in &scenario.grids.t {
                    if sys.domain().check_span(t, t + sigma).is_err() {
                        continue;
                    }
                    let g = gramian_by_kind(sys, base_kind, t, sigma, &opts)?;
                    smallest = smallest.min(g.lambda_min_clamped());
                    if g.lambda_min_clamped() <= 0.0 {
                        all_positive = false;
                    }
                }
            }
            Ok((
                all_positive == expected,
                format!("smallest window eigenvalue {smallest:.3e} (grid-scoped verdict)"),
            ))
        })();
        push(&mut stages, "complete-at-sampled-windows", outcome);
    }

    // uniform and nonuniform Gramian envelopes on both kinds
    for (label, caps, expected) in [
        ("uniform-gramian-envelope", RateCaps::uniform(), scenario.expected.uniform),
        ("nonuniform-gramian-envelope", RateCaps::default(), scenario.expected.nonuniform),
    ] {
        let Some(expected) = expected else { continue };
        let outcome = (|| {
            let c1 = certify_gramian_envelope(
                sys,
                base_kind,
                &scenario.grids.t,
                &scenario.grids.sigma,
                caps,
                &opts,
                &config,
            )?;
            let c2 = certify_gramian_envelope(
                sys,
                congruent_kind,
                &scenario.grids.t,
                &scenario.grids.sigma,
                caps,
                &opts,
                &config,
            )?;
            let status = combine(c1.status, c2.status);
            Ok((
                status == expected,
                format!(
                    "{base_kind}: {:?}, {congruent_kind}: {:?} (expected {expected:?})",
                    c1.status, c2.status
                ),
            ))
        })();
        push(&mut stages, label, outcome);
    }

    // nonuniform bounded growth of the plant
    if let Some(expected) = scenario.expected.growth {
        let outcome = (|| {
            let cert =
                fit_growth_envelope(sys.plant(), sys.domain(), &scenario.grids.pairs, 8.0, &config)?;
            let detail = match &cert.params {
                Some(p) => format!(
                    "status {:?} (expected {expected:?}); K0 = {:.4}, a = {:.4}, eta = {:.4}",
                    cert.status, p.k0, p.a, p.eta
                ),
                None => format!("status {:?} (expected {expected:?}); {}", cert.status, cert.note),
            };
            Ok((cert.status == expected, detail))
        })();
        push(&mut stages, "growth-envelope", outcome);
    }

    // pinned witness pairs must violate any fixed uniform envelope with
    // growing margin
    if !scenario.pinned_witnesses.is_empty() {
        let outcome = (|| {
            let mut values = Vec::new();
            for &(t, s) in &scenario.pinned_witnesses {
                let phi = crate::propagator::transition_norm(
                    sys.plant(),
                    sys.domain(),
                    TransitionQuery::new(s, t),
                )?;
                values.push(phi.max(1e-300).ln());
            }
            let monotone = values.windows(2).all(|w| w[1] > w[0] + 0.1);
            Ok((
                monotone,
                format!("log transition norms along the pinned sequence: {values:?}"),
            ))
        })();
        push(&mut stages, "pinned-witness-growth", outcome);
    }

    // duality identities at the first valid window
    if scenario.observes() {
        let outcome = (|| {
            let sigma = scenario.grids.sigma[0].max(0.5);
            let t = scenario
                .grids
                .t
                .iter()
                .cloned()
                .find(|&t| {
                    sys.domain().check_span(t, t + sigma).is_ok()
                        && sys.domain().reflect().check_span(-t - sigma, -t).is_ok()
                })
                .ok_or_else(|| Error::Precondition("no valid duality window".into()))?;
            let report = verify_gramian_identities(sys, t, sigma, 1e-6, &opts)?;
            Ok((
                report.pass,
                format!(
                    "window ({t}, {sigma}): max deviation {:.3e}",
                    report.max_deviation()
                ),
            ))
        })();
        push(&mut stages, "gramian-identities", outcome);
    }

    // explicit closed-loop stability target
    if let Some((loop_plant, target)) = &scenario.closed_loop_target {
        let outcome = (|| {
            let points: Vec<f64> = {
                let (lo, hi) = sys.domain().clip(-10.0, 10.0);
                linspace(lo, hi, 41)
            };
            let pairs = forward_pairs(&points, 20.0);
            let cert = certify_nues(
                loop_plant,
                sys.domain(),
                &pairs,
                NuesDirection::Forward,
                Some(*target),
                &config,
            )?;
            Ok((
                cert.is_certified() && cert.min_margin >= 0.0,
                format!(
                    "status {:?}, min margin {:.3e} against (M, beta, delta) = ({:.4}, {:.4}, {:.4})",
                    cert.status, cert.min_margin, target.m, target.beta, target.delta
                ),
            ))
        })();
        push(&mut stages, "closed-loop-target", outcome);
    }

    // constructive sandwich from the fitted growth envelope
    if scenario.constructive_bounds {
        let outcome = (|| {
            let growth = fit_growth_envelope(
                sys.plant(),
                sys.domain(),
                &scenario.grids.pairs,
                8.0,
                &config,
            )?;
            let envelope = growth
                .params
                .ok_or_else(|| Error::Precondition("growth fit did not certify".into()))?;
            let report = constructive_observability_bounds(
                sys,
                &envelope,
                &scenario.grids.t,
                &scenario.grids.sigma,
                1e-9,
                &opts,
            )?;
            Ok((
                report.pass,
                format!("min relative margin {:.3e}", report.min_margin),
            ))
        })();
        push(&mut stages, "constructive-bounds", outcome);
    }

    // small observer synthesis where expected
    if let Some(window) = scenario.synthesis_window {
        let outcome = (|| {
            let dual = crate::duality::dual_system(sys)?;
            let dual_growth = fit_growth_envelope(
                dual.plant(),
                dual.domain(),
                &scenario
                    .grids
                    .pairs
                    .iter()
                    .map(|&(t, s)| (-t, -s))
                    .collect::<Vec<_>>(),
                8.0,
                &config,
            )?;
            let dual_w = certify_gramian_envelope(
                &dual,
                GramianKind::W,
                &scenario.grids.t.iter().map(|t| -t - 1.0).collect::<Vec<_>>(),
                &scenario.grids.sigma,
                RateCaps::default(),
                &opts,
                &config,
            )?;
            let rates = crate::riccati::SourceRates::from_certificates(&dual_growth, &dual_w)?;
            let l_param = crate::riccati::suggested_l_param(&rates);
            let synth = crate::riccati::synthesize_observer(sys, l_param, window, rates)?;
            let (lo, hi) = synth.gain.schedule.window();
            let err_plant = crate::riccati::ObserverLoop {
                sys,
                gain: &synth.gain.schedule,
            };
            let pairs = forward_pairs(&linspace(lo, hi, 15), (hi - lo).min(8.0));
            let cert = certify_nues(
                &err_plant,
                sys.domain(),
                &pairs,
                NuesDirection::Forward,
                None,
                &config,
            )?;
            Ok((
                cert.is_certified(),
                format!(
                    "gain window [{lo:.2}, {hi:.2}], error-system fit {:?} with beta {:.3}",
                    cert.status,
                    cert.params.map(|p| p.beta).unwrap_or(f64::NAN)
                ),
            ))
        })();
        push(&mut stages, "observer-pipeline", outcome);
    }

    let pass = stages.iter().all(|s| s.pass);
    Ok(ScenarioReport {
        name: scenario.name,
        stages,
        pass,
    })
}

// ---------------------------------------------------------------------------
// random systems
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoefficientFamily {
    /// Polynomials of degree at most 3.
    Polynomial,
    Trig,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabilityBias {
    /// Diagonally dominant decay; forward stability certifiable on [-5, 5].
    Decaying,
    Neutral,
}

#[derive(Debug, Clone, Copy)]
pub struct RandomSystemSpec {
    pub n: usize,
    pub family: CoefficientFamily,
    pub bias: StabilityBias,
    pub seed: u64,
}

/// Deterministic random LTV system: the same spec yields byte-identical
/// configs. Coefficients are bounded so transitions stay finite on [-5, 5].
pub fn random_system(spec: &RandomSystemSpec) -> LtvSystem {
    assert!((1..=6).contains(&spec.n), "state dimension must be 1..=6");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let round3 = |v: f64| (v * 1000.0).round() / 1000.0;

    let mut term = |rng: &mut ChaCha8Rng, scale: f64, family: CoefficientFamily| -> String {
        let poly = |rng: &mut ChaCha8Rng| {
            let c0 = round3(rng.random_range(-scale..scale));
            let c1 = round3(rng.random_range(-scale..scale) * 0.2);
            let c2 = round3(rng.random_range(-scale..scale) * 0.02);
            let c3 = round3(rng.random_range(-scale..scale) * 0.004);
            format!("{c0} + {c1}*t + {c2}*t^2 + {c3}*t^3")
        };
        let trig = |rng: &mut ChaCha8Rng| {
            let c0 = round3(rng.random_range(-scale..scale));
            let c1 = round3(rng.random_range(-scale..scale));
            let w1 = round3(rng.random_range(0.3..2.0));
            let c2 = round3(rng.random_range(-scale..scale));
            let w2 = round3(rng.random_range(0.3..2.0));
            format!("{c0} + {c1}*sin({w1}*t) + {c2}*cos({w2}*t)")
        };
        match family {
            CoefficientFamily::Polynomial => poly(rng),
            CoefficientFamily::Trig => trig(rng),
            CoefficientFamily::Mixed => {
                if rng.random_range(0.0..1.0) < 0.5 {
                    poly(rng)
                } else {
                    trig(rng)
                }
            }
        }
    };

    let mut a_grid: Vec<Vec<String>> = Vec::with_capacity(n);
    for r in 0..n {
        let mut row = Vec::with_capacity(n);
        for c in 0..n {
            if r == c {
                let base = term(&mut rng, 0.2, spec.family);
                match spec.bias {
                    StabilityBias::Decaying => {
                        let d = round3(rng.random_range(0.7..1.5));
                        row.push(format!("-{d} + {base}"));
                    }
                    StabilityBias::Neutral => row.push(base),
                }
            } else {
                row.push(term(&mut rng, 0.3 / n as f64, spec.family));
            }
        }
        a_grid.push(row);
    }
    let b_grid: Vec<Vec<String>> = (0..n)
        .map(|_| vec![format!("{}", round3(rng.random_range(0.4..1.5)))])
        .collect();
    let c_grid: Vec<Vec<String>> = vec![(0..n)
        .map(|_| format!("{}", round3(rng.random_range(0.4..1.5))))
        .collect()];

    let family_tag = match spec.family {
        CoefficientFamily::Polynomial => "poly",
        CoefficientFamily::Trig => "trig",
        CoefficientFamily::Mixed => "mixed",
    };
    LtvSystem::new(
        format!("random-{family_tag}-{}-{}", spec.n, spec.seed),
        MatrixFunction::parse(&a_grid).unwrap(),
        Some(MatrixFunction::parse(&b_grid).unwrap()),
        Some(MatrixFunction::parse(&c_grid).unwrap()),
        None,
        TimeDomain::real_line(),
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_contains_the_pinned_names() {
        let names: Vec<String> = list_scenarios().into_iter().map(|(n, _)| n).collect();
        for expected in [
            "example1-family",
            "example2-uco",
            "example2-dual",
            "example3-cc-only",
            "example3-co-only",
            "example4-nuco-not-uco",
            "counterexample-detectable-not-nuco",
        ] {
            assert!(names.contains(&expected.to_string()), "missing {expected}");
        }
        // stable ordering
        assert_eq!(names, list_scenarios().into_iter().map(|(n, _)| n).collect::<Vec<_>>());
    }

    #[test]
    fn unknown_scenario_is_an_error() {
        assert!(matches!(
            run_scenario("no-such-thing", None),
            Err(Error::UnknownScenario(_))
        ));
    }

    #[test]
    fn random_systems_are_deterministic() {
        let spec = RandomSystemSpec {
            n: 2,
            family: CoefficientFamily::Trig,
            bias: StabilityBias::Decaying,
            seed: 7,
        };
        let a = serde_json::to_string(&random_system(&spec).to_config()).unwrap();
        let b = serde_json::to_string(&random_system(&spec).to_config()).unwrap();
        assert_eq!(a, b);
        let other = serde_json::to_string(
            &random_system(&RandomSystemSpec { seed: 8, ..spec }).to_config(),
        )
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn decaying_bias_is_mostly_certifiable() {
        let config = FitConfig {
            polish: false,
            ..Default::default()
        };
        let points = linspace(-5.0, 5.0, 11);
        let pairs = forward_pairs(&points, 10.0);
        let mut certified = 0;
        for seed in 0..50 {
            let sys = random_system(&RandomSystemSpec {
                n: 2,
                family: CoefficientFamily::Mixed,
                bias: StabilityBias::Decaying,
                seed,
            });
            let cert = certify_nues(
                sys.plant(),
                sys.domain(),
                &pairs,
                NuesDirection::Forward,
                None,
                &config,
            )
            .unwrap();
            if cert.is_certified() {
                certified += 1;
            }
        }
        assert!(certified >= 45, "only {certified}/50 certified");
    }

    #[test]
    fn random_polynomial_pairs_satisfy_the_gramian_identities() {
        for seed in [3, 11] {
            let sys = random_system(&RandomSystemSpec {
                n: 2,
                family: CoefficientFamily::Polynomial,
                bias: StabilityBias::Decaying,
                seed,
            });
            let report =
                verify_gramian_identities(&sys, 0.3, 0.7, 1e-6, &GramianOptions::default())
                    .unwrap();
            assert!(report.pass, "seed {seed}: {:?}", report.deviations);
        }
    }

    #[test]
    fn scalar_decay_scenario_passes_its_table() {
        let report = run_scenario("example2-uco", None).unwrap();
        for stage in &report.stages {
            assert!(stage.pass, "stage {} failed: {}", stage.stage, stage.detail);
        }
    }

    #[test]
    fn fast_decay_observed_scenario_passes_its_table() {
        let report = run_scenario("example3-co-only", None).unwrap();
        for stage in &report.stages {
            assert!(stage.pass, "stage {} failed: {}", stage.stage, stage.detail);
        }
    }

    #[test]
    fn oscillatory_scenario_passes_its_table() {
        let report = run_scenario("example4-nuco-not-uco", None).unwrap();
        for stage in &report.stages {
            assert!(stage.pass, "stage {} failed: {}", stage.stage, stage.detail);
        }
    }

    #[test]
    fn planar_counterexample_passes_its_table() {
        let report = run_scenario("counterexample-detectable-not-nuco", None).unwrap();
        for stage in &report.stages {
            assert!(stage.pass, "stage {} failed: {}", stage.stage, stage.detail);
        }
    }

    #[test]
    fn mirrored_scenario_certifies_on_the_reflected_domain() {
        let report = run_scenario("example2-dual", None).unwrap();
        for stage in &report.stages {
            assert!(stage.pass, "stage {} failed: {}", stage.stage, stage.detail);
        }
    }
}

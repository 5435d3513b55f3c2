//! Bloch-electron subcommands: `bloch-bands`, `bloch-berry`, `bloch-flow`
//! and `hall`.
//!
//! All four share the `[lattice]`, `[potential]` and `[bands]` tables.  The
//! band geometry of the zero potential is the trivial free-band geometry
//! (`𝒜 = Ω = M = 0`); otherwise it is computed from Wilson loops and sums
//! over states, which requires a gapped band.
//!
//! # Outputs
//!
//! * `bloch-bands` — `bands.csv`: `ik, theta_j.., k_j.., e_0, e_1, ..`;
//! * `bloch-berry` — `berry_grid.csv` (`ik, theta_j.., energy, a_j..,
//!   m12, v_j..`), `berry_curvature.csv` (`ip, theta_j.., omega12`, two
//!   dimensions) and `berry_summary.csv`;
//! * `bloch-flow` — `flow.csv`: `t, r_j.., k_j.., h_sc`;
//! * `hall` — `hall.csv`: one row with the current and its parts.
//!
//! # Checks
//!
//! * bands: `band_ordering`, `periodicity`, optional `cutoff_convergence`,
//!   and `free_bands` (exact folding) for the zero potential;
//! * berry: `chern_integrality`, `time_reversal` (real potentials, two
//!   dimensions), optional `expected_chern`;
//! * flow: `energy_drift`, `zone_confinement`, and `classical_limit` at
//!   `eps = 0`;
//! * hall: `chern_term_quantized` (the Chern term equals
//!   `2πC/|BZ| (∂₂φ, −∂₁φ)`), `gradient_integral`, and
//!   `magnetic_term_vanishes` without field or coupling.

use std::collections::BTreeMap;

use magweyl::bloch::{
    band_structure, berry_data, cutoff_convergence, effective_hamiltonian, free_band_geometry, hall_current,
    macroscopic_flow, parse_potential, BerryData, BlochSolution, Lattice, PeriodicPotential,
};
use magweyl::geometry::{MagneticField, Parameters};
use magweyl::semiclassics::magnetic_flow;
use magweyl::C64;
use serde::{Deserialize, Serialize};

use crate::config::{require_range, BandsConfig, Env, FieldConfig, LatticeConfig, Num, PotentialConfig};
use crate::error::{config_err_if, CliError, CliResult};
use crate::output::{fmt, worst, Run, Table};

struct Setup {
    env: Env,
    lattice: Lattice,
    potential: PeriodicPotential,
    solution: BlochSolution,
}

fn setup(
    constants: &BTreeMap<String, Num>,
    lattice: &LatticeConfig,
    potential: &Option<PotentialConfig>,
    bands: &BandsConfig,
    run: &mut Run,
) -> CliResult<Setup> {
    let env = Env::builtin().with_user(constants)?;
    let lattice = lattice.resolve(&env)?;
    let potential = potential.clone().unwrap_or_default().resolve(lattice.dim(), &env)?;
    config_err_if(bands.n_bands == 0, "bands.n_bands: must be at least 1")?;
    let solution = run.stage("band structure", || band_structure(&potential, &lattice, bands.cutoff, bands.n_bands))?;
    Ok(Setup {
        env,
        lattice,
        potential,
        solution,
    })
}

fn is_zero(v: &PeriodicPotential) -> bool {
    v.entries().iter().all(|e| e.value == C64::new(0.0, 0.0))
}

fn geometry(s: &Setup, band: usize, gap: Option<f64>, run: &mut Run) -> CliResult<(BerryData, &'static str)> {
    if is_zero(&s.potential) {
        Ok((run.stage("free-band geometry", || free_band_geometry(&s.solution, band))?, "free"))
    } else {
        Ok((run.stage("band geometry", || berry_data(&s.solution, band, gap))?, "wilson_loops"))
    }
}

fn axis_names(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("{prefix}{j}")).collect()
}

fn optional(env: &Env, n: &Option<Num>, field: &str) -> CliResult<Option<f64>> {
    n.as_ref().map(|n| env.num(n, field)).transpose()
}

// ---------------------------------------------------------------------------
// bloch-bands
// ---------------------------------------------------------------------------

/// Configuration of `bloch-bands`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandsCommandConfig {
    /// Named constants.
    #[serde(default)]
    pub constants: BTreeMap<String, Num>,
    /// The lattice.
    pub lattice: LatticeConfig,
    /// The periodic potential (zero if absent).
    pub potential: Option<PotentialConfig>,
    /// Plane-wave basis and band count.
    pub bands: BandsConfig,
    /// Optional checks.
    #[serde(default)]
    pub checks: BandsChecks,
    /// Check thresholds.
    #[serde(default)]
    pub tolerances: BandsTolerances,
}

/// Optional checks of `bloch-bands`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandsChecks {
    /// Compare the lowest band with cutoff `G` against `2G`.
    #[serde(default)]
    pub cutoff_convergence: bool,
}

/// Thresholds of `bloch-bands`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandsTolerances {
    /// Allowed `|E(k + e*) − E(k)|`.
    pub periodicity: f64,
    /// Allowed change of the lowest band from `G` to `2G`.
    pub cutoff: f64,
    /// Allowed deviation from the folded free bands (zero potential).
    pub free_bands: f64,
}

impl Default for BandsTolerances {
    fn default() -> Self {
        Self {
            periodicity: 1e-9,
            cutoff: 1e-6,
            free_bands: 0.0,
        }
    }
}

/// Runs `bloch-bands`.
pub fn execute_bands(cfg: &BandsCommandConfig, run: &mut Run) -> CliResult<()> {
    run.tolerances(&cfg.tolerances);
    let s = setup(&cfg.constants, &cfg.lattice, &cfg.potential, &cfg.bands, run)?;
    let (lat, sol) = (&s.lattice, &s.solution);
    let d = lat.dim();
    let nb = cfg.bands.n_bands;

    let mut header = vec!["ik".to_string()];
    header.extend(axis_names("theta", d));
    header.extend(axis_names("k", d));
    header.extend((0..nb).map(|b| format!("e{b}")));
    let mut table = Table::new("bands.csv", header);
    let mut disorder = 0usize;
    for ik in 0..lat.n_k() {
        let (theta, k) = (lat.reduced(ik), lat.k_point(ik));
        let mut row = vec![ik.to_string()];
        row.extend(theta[..d].iter().map(|&t| fmt(t)));
        row.extend(k[..d].iter().map(|&t| fmt(t)));
        row.extend(sol.energies[ik].iter().map(|&e| fmt(e)));
        disorder += sol.energies[ik].windows(2).filter(|w| w[1] < w[0]).count();
        table.push(row);
    }
    run.check_at_most("band_ordering", disorder as f64, 0.0);
    let periodicity = run.stage("periodicity", || sol.periodicity_defect())?;
    run.check_at_most("periodicity", periodicity, cfg.tolerances.periodicity);
    if cfg.checks.cutoff_convergence {
        let c = run.stage("cutoff convergence", || cutoff_convergence(&s.potential, lat, cfg.bands.cutoff))?;
        run.check_at_most("cutoff_convergence", c, cfg.tolerances.cutoff);
    }
    if is_zero(&s.potential) {
        let mut dev = Vec::new();
        for ik in 0..lat.n_k() {
            let k = lat.k_point(ik);
            let mut folded: Vec<f64> = sol
                .basis
                .indices()
                .iter()
                .map(|n| {
                    let g = lat.dual_point(n);
                    0.5 * (0..d).map(|l| (k[l] + g[l]).powi(2)).sum::<f64>()
                })
                .collect();
            folded.sort_by(f64::total_cmp);
            dev.extend(sol.energies[ik].iter().zip(&folded).map(|(e, f)| (e - f).abs()));
        }
        run.check_at_most("free_bands", worst(dev), cfg.tolerances.free_bands);
    }
    run.table(table);
    Ok(())
}

// ---------------------------------------------------------------------------
// bloch-berry
// ---------------------------------------------------------------------------

/// Configuration of `bloch-berry`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BerryCommandConfig {
    /// Named constants.
    #[serde(default)]
    pub constants: BTreeMap<String, Num>,
    /// The lattice.
    pub lattice: LatticeConfig,
    /// The periodic potential (zero if absent).
    pub potential: Option<PotentialConfig>,
    /// Plane-wave basis and band count.
    pub bands: BandsConfig,
    /// The band and its gap requirement.
    pub berry: BerrySection,
    /// Check thresholds.
    #[serde(default)]
    pub tolerances: BerryTolerances,
}

/// The `[berry]` table.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BerrySection {
    /// Band index (0 is the lowest).
    pub band: usize,
    /// Required gap; defaults to `10⁻³ ×` bandwidth.
    pub gap: Option<Num>,
    /// Expected Chern number, checked if given.
    pub expected_chern: Option<i64>,
}

/// Thresholds of `bloch-berry`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BerryTolerances {
    /// Allowed distance of the raw Chern sum from an integer.
    pub integrality: f64,
    /// Allowed `|Ω(k) + Ω(−k)|`.
    pub time_reversal: f64,
}

impl Default for BerryTolerances {
    fn default() -> Self {
        Self {
            integrality: 1e-6,
            time_reversal: 1e-8,
        }
    }
}

/// Runs `bloch-berry`.
pub fn execute_berry(cfg: &BerryCommandConfig, run: &mut Run) -> CliResult<()> {
    run.tolerances(&cfg.tolerances);
    let s = setup(&cfg.constants, &cfg.lattice, &cfg.potential, &cfg.bands, run)?;
    let gap = optional(&s.env, &cfg.berry.gap, "berry.gap")?;
    let band = cfg.berry.band;
    let (berry, kind) = geometry(&s, band, gap, run)?;
    let lat = &s.lattice;
    let d = lat.dim();
    let energies = s.solution.band(band).map_err(|e| CliError::from_stage("band", e))?;

    let mut header = vec!["ik".to_string()];
    header.extend(axis_names("theta", d));
    header.push("energy".into());
    header.extend(axis_names("a", d));
    header.push("m12".into());
    header.extend(axis_names("v", d));
    let mut grid = Table::new("berry_grid.csv", header);
    for ik in 0..lat.n_k() {
        let mut row = vec![ik.to_string()];
        row.extend(lat.reduced(ik)[..d].iter().map(|&t| fmt(t)));
        row.push(fmt(energies[ik]));
        row.extend(berry.connection[ik][..d].iter().map(|&a| fmt(a)));
        row.push(fmt(berry.rammal_wilkinson[ik][0][1]));
        row.extend(berry.velocity[ik][..d].iter().map(|&v| fmt(v)));
        grid.push(row);
    }
    run.table(grid);
    if d == 2 {
        let mut curv = Table::new(
            "berry_curvature.csv",
            vec!["ip".into(), "theta1".into(), "theta2".into(), "omega12".into()],
        );
        for (ip, om) in berry.curvature.iter().enumerate() {
            let c = lat.plaquette_centre(ip);
            curv.push(vec![ip.to_string(), fmt(c[0]), fmt(c[1]), fmt(*om)]);
        }
        run.table(curv);
    }
    let integral = berry.curvature_integral(lat);
    let tr = berry.time_reversal_defect(lat);
    let mut summary = Table::new(
        "berry_summary.csv",
        [
            "band",
            "geometry",
            "chern",
            "chern_raw",
            "curvature_integral",
            "curvature_abs_integral",
            "time_reversal_defect",
            "gap_tolerance",
        ]
        .map(String::from)
        .to_vec(),
    );
    summary.push(vec![
        band.to_string(),
        kind.to_string(),
        berry.chern.to_string(),
        fmt(berry.chern_raw),
        fmt(integral),
        fmt(berry.curvature_abs_integral(lat)),
        fmt(tr),
        fmt(berry.gap_tolerance),
    ]);
    run.table(summary);

    run.check_at_most(
        "chern_integrality",
        (berry.chern_raw - berry.chern as f64).abs(),
        cfg.tolerances.integrality,
    );
    if d == 2 && s.potential.is_real() {
        run.check_at_most("time_reversal", tr, cfg.tolerances.time_reversal);
    }
    if let Some(c) = cfg.berry.expected_chern {
        run.check_at_most("expected_chern", (berry.chern - c).abs() as f64, 0.0);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// bloch-flow
// ---------------------------------------------------------------------------

/// Configuration of `bloch-flow`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowCommandConfig {
    /// Named constants.
    #[serde(default)]
    pub constants: BTreeMap<String, Num>,
    /// The lattice.
    pub lattice: LatticeConfig,
    /// The periodic potential (zero if absent).
    pub potential: Option<PotentialConfig>,
    /// Plane-wave basis and band count.
    pub bands: BandsConfig,
    /// The slowly varying magnetic field (`b12`; zero if absent).
    #[serde(default)]
    pub field: FieldConfig,
    /// Band, potential and integration parameters.
    pub flow: FlowSection,
    /// Check thresholds.
    #[serde(default)]
    pub tolerances: FlowTolerances,
}

/// The `[flow]` table.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    /// Band index.
    pub band: usize,
    /// Required gap; defaults to `10⁻³ ×` bandwidth.
    pub gap: Option<Num>,
    /// Electrostatic potential `φ(r)` in `x1[, x2]`.
    #[serde(default = "zero_text")]
    pub phi: String,
    /// Adiabatic parameter, in `[0, 1]` (0 is the classical limit).
    pub eps: Num,
    /// Coupling, in `[0, 1]`.
    pub lambda: Num,
    /// Initial position.
    pub r0: Vec<Num>,
    /// Initial quasi-momentum.
    pub k0: Vec<Num>,
    /// Final time.
    pub time: Num,
    /// RK4 step.
    pub dt: Num,
}

fn zero_text() -> String {
    "0".to_string()
}

/// Thresholds of `bloch-flow`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowTolerances {
    /// Allowed relative drift of `h_sc`.
    pub energy_drift: f64,
    /// Allowed deviation from the ordinary magnetic flow at `eps = 0`.
    pub classical_limit: f64,
}

impl Default for FlowTolerances {
    fn default() -> Self {
        Self {
            energy_drift: 1e-6,
            classical_limit: 1e-8,
        }
    }
}

fn parameters(env: &Env, eps: &Num, lambda: &Num, section: &str) -> CliResult<Parameters> {
    Ok(Parameters {
        eps: require_range(env.num(eps, &format!("{section}.eps"))?, 0.0, 1.0, &format!("{section}.eps"))?,
        lambda: require_range(env.num(lambda, &format!("{section}.lambda"))?, 0.0, 1.0, &format!("{section}.lambda"))?,
    })
}

fn wrapped_distance(lat: &Lattice, a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (f, _) = lat.fold(&diff);
    f[..lat.dim()].iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Runs `bloch-flow`.
pub fn execute_flow(cfg: &FlowCommandConfig, run: &mut Run) -> CliResult<()> {
    run.tolerances(&cfg.tolerances);
    let s = setup(&cfg.constants, &cfg.lattice, &cfg.potential, &cfg.bands, run)?;
    let (lat, env) = (&s.lattice, &s.env);
    let d = lat.dim();
    let f = &cfg.flow;
    let b: MagneticField = cfg.field.magnetic(d, env)?;
    let phi = parse_potential(d, &env.substitute(&f.phi)).map_err(|e| CliError::Config(format!("flow.phi: {e}")))?;
    let params = parameters(env, &f.eps, &f.lambda, "flow")?;
    let r0 = env.vector(&f.r0, d, "flow.r0")?;
    let k0 = env.vector(&f.k0, d, "flow.k0")?;
    let time = env.num(&f.time, "flow.time")?;
    let dt = env.num(&f.dt, "flow.dt")?;
    let gap = optional(env, &f.gap, "flow.gap")?;
    let (berry, _) = geometry(&s, f.band, gap, run)?;
    let eff = run.stage("effective Hamiltonian", || {
        effective_hamiltonian(&s.solution, f.band, &b, &phi, &berry, params)
    })?;
    let traj = run.stage("macroscopic flow", || macroscopic_flow(&eff, &r0, &k0, time, dt))?;

    let mut header = vec!["t".to_string()];
    header.extend(axis_names("r", d));
    header.extend(axis_names("k", d));
    header.push("h_sc".into());
    let mut table = Table::new("flow.csv", header);
    let mut outside = 0usize;
    for ((t, z), e) in traj.times.iter().zip(&traj.points).zip(&traj.energies) {
        let mut row = vec![fmt(*t)];
        row.extend(z.iter().map(|&v| fmt(v)));
        row.push(fmt(*e));
        table.push(row);
        let theta = lat.to_reduced(&z[d..]);
        outside += theta[..d].iter().filter(|t| !(-0.5..0.5).contains(*t)).count();
    }
    run.check_at_most("energy_drift", traj.energy_drift(), cfg.tolerances.energy_drift);
    run.check_at_most("zone_confinement", outside as f64, 0.0);
    if params.eps == 0.0 {
        let classical = run.stage("classical magnetic flow", || {
            magnetic_flow(&eff.leading(), &b, params.lambda, &r0, &k0, time, dt)
        })?;
        let dev = if classical.points.len() == traj.points.len() {
            worst(traj.points.iter().zip(&classical.points).map(|(a, c)| {
                let dr = (0..d).map(|l| (a[l] - c[l]).powi(2)).sum::<f64>().sqrt();
                dr.max(wrapped_distance(lat, &a[d..], &c[d..]))
            }))
        } else {
            f64::NAN
        };
        run.check_at_most("classical_limit", dev, cfg.tolerances.classical_limit);
    }
    run.table(table);
    Ok(())
}

// ---------------------------------------------------------------------------
// hall
// ---------------------------------------------------------------------------

/// Configuration of `hall`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HallCommandConfig {
    /// Named constants.
    #[serde(default)]
    pub constants: BTreeMap<String, Num>,
    /// The lattice (two dimensions).
    pub lattice: LatticeConfig,
    /// The periodic potential (zero if absent).
    pub potential: Option<PotentialConfig>,
    /// Plane-wave basis and band count.
    pub bands: BandsConfig,
    /// The slowly varying magnetic field (`b12`; zero if absent).
    #[serde(default)]
    pub field: FieldConfig,
    /// Band, potential and evaluation point.
    pub hall: HallSection,
    /// Check thresholds.
    #[serde(default)]
    pub tolerances: HallTolerances,
}

/// The `[hall]` table.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HallSection {
    /// Band index.
    pub band: usize,
    /// Required gap; defaults to `10⁻³ ×` bandwidth.
    pub gap: Option<Num>,
    /// Electrostatic potential `φ(r)`.
    pub phi: String,
    /// Adiabatic parameter, in `[0, 1]`.
    pub eps: Num,
    /// Coupling, in `[0, 1]`.
    pub lambda: Num,
    /// Evaluation point.
    pub r: Vec<Num>,
}

/// Thresholds of `hall`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HallTolerances {
    /// Allowed deviation of the Chern term from its quantized value.
    pub chern_term: f64,
    /// Allowed `|∫ ∇_k E dk|`.
    pub gradient_integral: f64,
    /// Allowed magnetic term without field or coupling.
    pub magnetic_term: f64,
}

impl Default for HallTolerances {
    fn default() -> Self {
        Self {
            chern_term: 1e-6,
            gradient_integral: 1e-8,
            magnetic_term: 1e-12,
        }
    }
}

/// Runs `hall`.
pub fn execute_hall(cfg: &HallCommandConfig, run: &mut Run) -> CliResult<()> {
    run.tolerances(&cfg.tolerances);
    let s = setup(&cfg.constants, &cfg.lattice, &cfg.potential, &cfg.bands, run)?;
    let (lat, env) = (&s.lattice, &s.env);
    config_err_if(lat.dim() != 2, "lattice: the Hall current needs two dimensions")?;
    let h = &cfg.hall;
    let b = cfg.field.magnetic(2, env)?;
    let phi = parse_potential(2, &env.substitute(&h.phi)).map_err(|e| CliError::Config(format!("hall.phi: {e}")))?;
    let params = parameters(env, &h.eps, &h.lambda, "hall")?;
    let r = env.vector(&h.r, 2, "hall.r")?;
    let gap = optional(env, &h.gap, "hall.gap")?;
    let (berry, _) = geometry(&s, h.band, gap, run)?;
    let eff = run.stage("effective Hamiltonian", || {
        effective_hamiltonian(&s.solution, h.band, &b, &phi, &berry, params)
    })?;
    let j = run.stage("Hall current", || hall_current(&eff, &r))?;

    let grad: Vec<f64> = (0..2)
        .map(|l| phi.partial(l).map(|g| g.eval(&r)))
        .collect::<magweyl::Result<_>>()
        .map_err(|e| CliError::from_stage("potential gradient", e))?;
    let q = 2.0 * std::f64::consts::PI * j.chern as f64 / lat.bz_volume();
    let expected = [q * grad[1], -q * grad[0]];
    let mut table = Table::new(
        "hall.csv",
        [
            "r1",
            "r2",
            "chern",
            "j1",
            "j2",
            "chern_term1",
            "chern_term2",
            "magnetic_term1",
            "magnetic_term2",
            "gradient_integral1",
            "gradient_integral2",
        ]
        .map(String::from)
        .to_vec(),
    );
    table.push(vec![
        fmt(r[0]),
        fmt(r[1]),
        j.chern.to_string(),
        fmt(j.current[0]),
        fmt(j.current[1]),
        fmt(j.chern_term[0]),
        fmt(j.chern_term[1]),
        fmt(j.magnetic_term[0]),
        fmt(j.magnetic_term[1]),
        fmt(j.gradient_integral[0]),
        fmt(j.gradient_integral[1]),
    ]);
    run.table(table);
    run.check_at_most(
        "chern_term_quantized",
        worst((0..2).map(|l| (j.chern_term[l] - expected[l]).abs())),
        cfg.tolerances.chern_term,
    );
    run.check_at_most(
        "gradient_integral",
        worst(j.gradient_integral.iter().map(|g| g.abs())),
        cfg.tolerances.gradient_integral,
    );
    if params.lambda == 0.0 || b.is_zero() {
        run.check_at_most(
            "magnetic_term_vanishes",
            worst(j.magnetic_term.iter().map(|m| m.abs())),
            cfg.tolerances.magnetic_term,
        );
    }
    Ok(())
}

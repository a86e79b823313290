//! Runs one scenario end to end: B₁ stage, gridded grating transit, snapshot,
//! B₂ stage, far field and Husimi analysis, then writes outputs and manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use serde::Serialize;

use super::config::{B1Config, ScenarioConfig};
use super::io::{self, DumpHeader};
use super::presets::ScenarioKind;
use crate::analysis::{
    analytic_deflection, b_pi_for_velocity, far_field, fit_through_origin, flip_law, flip_probability,
    fringe_estimate, fringe_width, husimi, mean_ky, y0_axis, zeeman_alpha, FarFieldProfile, HusimiMap, KyAxis,
    TransverseSlice,
};
use crate::constants::CONSTANTS;
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::grid::{make_grid, Grid2D, ScalarField};
use crate::potentials::{GratingSpec, ScatteringScene};
use crate::propagator::{
    apply_b1_rotation, zeeman_kick, ActiveField, FieldStage, Flow, Propagator, StageMode, StepPlan, StepRecord,
};
use crate::spinor::{init_gaussian_spinor, populations, PacketSpec, Spin, SpinorField};

/// Packet starts this many `σx` inside the absorber-free core.
const START_SIGMAS: f64 = 5.0;
/// Pre-grating snapshot once the centroid is this many `σx` from the front face.
const PRE_SIGMAS: f64 = 3.0;
/// Post-grating snapshot once the free-flight centroid is this far past the
/// back face; the transit also ends no earlier than the transmitted centroid
/// reaching the same plane.
const POST_SIGMAS: f64 = 2.0;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Size of a dedicated worker pool; `None` uses the global pool.
    pub threads: Option<usize>,
}

/// Where everything sits on the grid.
#[derive(Debug, Clone)]
pub struct Layout {
    pub grid: Grid2D,
    pub packet: PacketSpec,
    pub grating: Option<GratingSpec>,
    pub x_front: f64,
    pub x_back: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSummary {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub x0: f64,
    pub y0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Derived {
    pub lambda_db: f64,
    pub k0: f64,
    pub energy_ev: f64,
    pub v_x: f64,
    pub b_pi: Option<f64>,
    pub chi: Option<f64>,
    /// `|α|` of the configured gradient stage (rad/m).
    pub alpha: f64,
    /// `(ħT_scr/m)|α|` (m).
    pub delta_y: f64,
    /// `λL/d` (m), when a grating is present.
    pub gamma: Option<f64>,
    pub t_scr: f64,
    pub dt: f64,
    pub grid: GridSummary,
    pub packet_x0: f64,
    pub x_front: f64,
    pub x_back: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateSummary {
    pub norm: f64,
    pub p_up: f64,
    pub p_dn: f64,
    pub mean_x: f64,
    pub mean_y: f64,
    /// Digest of the raw amplitudes (little-endian re, im; up then down).
    pub sha256: String,
}

impl StateSummary {
    pub fn of(state: &SpinorField) -> Self {
        let (p_up, p_dn) = populations(state);
        let (mean_x, mean_y, _, _) = state.position_moments();
        let mut bytes = Vec::with_capacity(32 * state.up.len());
        for v in state.up.iter().chain(&state.dn) {
            bytes.extend_from_slice(&v.re.to_le_bytes());
            bytes.extend_from_slice(&v.im.to_le_bytes());
        }
        Self {
            norm: p_up + p_dn,
            p_up,
            p_dn,
            mean_x,
            mean_y,
            sha256: io::sha256_hex(&bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub label: String,
    pub step: usize,
    pub time: f64,
    pub centroid_x: f64,
    pub peak_bz_self: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlipPoint {
    pub chi: f64,
    pub p_flip: f64,
    pub p_flip_analytic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub l_b2: f64,
    /// Signed kick of the up channel (rad/m); the down channel gets the opposite.
    pub kick_up: f64,
    /// Channel centroids; `None` when the channel carries no intensity.
    pub ky_up: Option<f64>,
    pub ky_dn: Option<f64>,
    pub centroid_up: Option<f64>,
    pub centroid_dn: Option<f64>,
    pub deflection_analytic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub transmission: Option<f64>,
    pub fringe_width: Option<f64>,
    /// `γd/(λL)`, 1 for the ideal grating law.
    pub fringe_ratio: Option<f64>,
    pub channel_fractions: Option<[f64; 2]>,
    pub p_flip_y: Option<f64>,
    pub centroid_up: Option<f64>,
    pub centroid_dn: Option<f64>,
    pub ky_up: Option<f64>,
    pub ky_dn: Option<f64>,
    pub peak_bz_pre: Option<f64>,
    pub peak_bz_post: Option<f64>,
    pub flip_sweep: Vec<FlipPoint>,
    pub max_flip_error: Option<f64>,
    pub husimi_sweep: Vec<SweepPoint>,
    pub fit_up: Option<LineFit>,
    pub fit_dn: Option<LineFit>,
    /// Anything that could not be evaluated, with the reason.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub scenario: String,
    pub variant: String,
    pub crate_version: String,
    pub config_hash: String,
    pub config: ScenarioConfig,
    pub derived: Derived,
    pub initial_state: StateSummary,
    pub snapshots: Vec<Snapshot>,
    pub metrics: Metrics,
    pub records: Vec<StepRecord>,
    pub outputs: Vec<OutputEntry>,
    /// Not part of the reproducible content.
    pub wall_clock_s: f64,
    pub threads: usize,
}

/// In-memory results alongside the manifest written to disk.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub out_dir: PathBuf,
    pub profile: Option<FarFieldProfile>,
    pub husimi: Option<HusimiMap>,
    pub bz_pre: Option<ScalarField>,
    pub bz_post: Option<ScalarField>,
}

/// SHA-256 of the canonical JSON of `cfg`, ignoring the output directory.
pub fn config_hash(cfg: &ScenarioConfig) -> String {
    let mut c = cfg.clone();
    c.output.dir = None;
    let json = serde_json::to_vec(&c).expect("config serializes");
    io::sha256_hex(&json)
}

fn resolved(mode: StageMode, enabled: bool) -> bool {
    enabled && mode == StageMode::GridResolved
}

/// Sizes the grid around the packet, optional grid-resolved stages and the
/// grating, leaving the absorber ramps outside the core region.
pub fn plan_layout(cfg: &ScenarioConfig) -> Result<Layout> {
    let pf = cfg.absorber.width_frac;
    let p = &cfg.packet;
    let b1_len = if resolved(cfg.b1.mode, cfg.b1.enabled) { cfg.b1.length } else { 0.0 };
    let b2_len = if resolved(cfg.b2.mode, cfg.b2.enabled) { cfg.b2.length } else { 0.0 };
    let thickness = cfg.grating.as_ref().map_or(0.0, |g| g.thickness);
    let core_x = START_SIGMAS * p.sigma_x + b1_len + p.approach + thickness + cfg.grid.downstream + b2_len;
    let extent_x = cfg.grid.extent_x.unwrap_or(core_x / (1.0 - 2.0 * pf));
    let extent_y = cfg.grid.extent_y.unwrap_or(2.0 * START_SIGMAS * p.sigma_y / (1.0 - 2.0 * pf));
    let g = make_grid(extent_x, extent_y, cfg.grid.spacing)?;
    // y = 0 lands on a grid line so the grating and packet are mirror-symmetric
    let y0 = -((g.ny / 2) as f64) * g.dy;
    let grid = g.with_origin(0.0, y0);

    let x_lo_core = pf * grid.extent_x();
    let x0c = x_lo_core + START_SIGMAS * p.sigma_x;
    let x_front = x0c + b1_len + p.approach;
    let x_back = x_front + thickness;
    if x_back + b2_len > grid.x_max() {
        return Err(Error::Geometry(format!(
            "grating back face at {x_back:.4e} m lies outside the {:.4e} m grid",
            grid.extent_x()
        )));
    }
    let grating = cfg
        .grating
        .as_ref()
        .map(|gc| {
            let spec = GratingSpec {
                period: gc.period,
                open_fraction: gc.open_fraction,
                thickness: gc.thickness,
                barrier_ev: gc.barrier_ev,
                image_scale: gc.image_scale,
                x_front,
                n_slits: gc.n_slits,
                y_center: 0.0,
            };
            spec.validate().map(|_| spec)
        })
        .transpose()?;
    let packet = PacketSpec {
        x0c,
        y0c: 0.0,
        sigma_x: p.sigma_x,
        sigma_y: p.sigma_y,
        lambda_db: p.lambda,
        alpha0: Complex64::new(p.alpha[0], p.alpha[1]),
        beta0: Complex64::new(p.beta[0], p.beta[1]),
    };
    Ok(Layout {
        grid,
        packet,
        grating,
        x_front,
        x_back,
    })
}

fn derive(cfg: &ScenarioConfig, layout: &Layout) -> Derived {
    let c = &CONSTANTS;
    let v = cfg.packet.velocity;
    let l_gs = cfg.screen.distance;
    let b_pi = (cfg.b1.length > 0.0).then(|| b_pi_for_velocity(cfg.b1.length, v));
    let g = &layout.grid;
    Derived {
        lambda_db: cfg.packet.lambda,
        k0: c.wavenumber(cfg.packet.lambda),
        energy_ev: c.kinetic_energy(cfg.packet.lambda) / c.ev(),
        v_x: v,
        b_pi,
        chi: b_pi.filter(|_| cfg.b1.enabled).map(|bp| cfg.b1.field / bp),
        alpha: zeeman_alpha(cfg.b2.gradient, cfg.b2.length, v),
        delta_y: analytic_deflection(cfg.b2.gradient, cfg.b2.length, v, l_gs),
        gamma: cfg.grating.as_ref().map(|gr| fringe_estimate(cfg.packet.lambda, l_gs, gr.period)),
        t_scr: l_gs / v,
        dt: cfg.plan.dt,
        grid: GridSummary {
            nx: g.nx,
            ny: g.ny,
            dx: g.dx,
            dy: g.dy,
            x0: g.x0,
            y0: g.y0,
        },
        packet_x0: layout.packet.x0c,
        x_front: layout.x_front,
        x_back: layout.x_back,
    }
}

/// Norm and mean `x` of the part of the state at `x >= x_lo`.
fn region_centroid(state: &SpinorField, x_lo: f64) -> (f64, f64) {
    let g = &state.grid;
    let ix0 = (0..g.nx).find(|&ix| g.x(ix) >= x_lo).unwrap_or(g.nx);
    let mut col = vec![0.0; g.nx];
    for iy in 0..g.ny {
        let row = iy * g.nx;
        for ix in ix0..g.nx {
            col[ix] += state.up[row + ix].norm_sqr() + state.dn[row + ix].norm_sqr();
        }
    }
    let (mut m0, mut m1) = (0.0, 0.0);
    for ix in ix0..g.nx {
        m0 += col[ix];
        m1 += col[ix] * g.x(ix);
    }
    let mean = if m0 > 0.0 { m1 / m0 } else { f64::NAN };
    (m0 * g.cell_area(), mean)
}

struct Transit {
    ran: bool,
    snapshots: Vec<Snapshot>,
    records: Vec<StepRecord>,
    bz_pre: Option<ScalarField>,
    bz_post: Option<ScalarField>,
    transmission: Option<f64>,
    notes: Vec<String>,
}

fn step_plan(cfg: &ScenarioConfig) -> StepPlan {
    let mut plan = StepPlan::new(cfg.plan.dt, cfg.plan.steps.unwrap_or(cfg.plan.max_steps));
    plan.self_field_enabled = cfg.plan.self_field;
    plan.current_terms = cfg.plan.current_terms;
    plan.coupling = cfg.plan.coupling;
    plan.curl = cfg.plan.curl;
    plan.h2_terms = cfg.b2.terms;
    plan.record_every = cfg.plan.record_every;
    plan.self_field_every = cfg.plan.self_field_every;
    plan
}

/// Distance already covered inside a grid-resolved B₁ stage.
fn b1_shift(b1: &B1Config, resolved: bool) -> f64 {
    if resolved {
        b1.length
    } else {
        0.0
    }
}

/// B₁ stage, grating transit up to the snapshot, and a grid-resolved B₂ stage.
fn transit(cfg: &ScenarioConfig, layout: &Layout, state: &mut SpinorField, b1: &B1Config) -> Result<Transit> {
    let v = cfg.packet.velocity;
    let steps = cfg.plan.steps;
    let b1_resolved = resolved(b1.mode, b1.enabled);
    let b2_resolved = resolved(cfg.b2.mode, cfg.b2.enabled);
    let mut out = Transit {
        ran: false,
        snapshots: Vec::new(),
        records: Vec::new(),
        bz_pre: None,
        bz_post: None,
        transmission: None,
        notes: Vec::new(),
    };
    if b1.enabled && !b1_resolved {
        apply_b1_rotation(state, b1.field, b1.length, v)?;
    }
    if steps == Some(0) && !b1_resolved && !b2_resolved {
        return Ok(out);
    }

    let scene = ScatteringScene::build(&layout.grid, layout.grating.as_ref(), Some(&cfg.absorber))?;
    let fft = Arc::new(Fft2::new(layout.grid.nx, layout.grid.ny));
    let mut prop = Propagator::new(Arc::new(scene), fft, step_plan(cfg))?;

    if b1_resolved {
        prop.run_stage(state, &FieldStage::b1(b1.field, b1.length, StageMode::GridResolved), v, 0.0)?;
    }

    if steps != Some(0) {
        out.ran = true;
        let sx = cfg.packet.sigma_x;
        let thr = cfg.plan.clear_threshold;
        let (x_front, x_back) = (layout.x_front, layout.x_back);
        let keep_fields = cfg.output.field_dumps;
        let mut pre: Option<Snapshot> = None;
        let mut post: Option<Snapshot> = None;
        let mut cleared = false;
        let mut last_mass = 0.0;
        let mut residual = f64::NAN;
        let n = steps.unwrap_or(cfg.plan.max_steps);
        // the slab is trivially empty before the packet arrives
        let v_group = CONSTANTS.hbar * layout.packet.k0() / CONSTANTS.m_e;
        let x_start = layout.packet.x0c + b1_shift(b1, b1_resolved);
        let t_arrive = prop.time() + (x_back - x_start) / v_group;
        let t_post = prop.time() + (x_back + POST_SIGMAS * sx - x_start) / v_group;
        let report = prop.evolve(state, &ActiveField::none(), n, |view| {
            if pre.is_none() {
                let (_, cx) = region_centroid(view.state, f64::NEG_INFINITY);
                if cx >= x_front - PRE_SIGMAS * sx {
                    pre = Some(Snapshot {
                        label: "pre_grating".into(),
                        step: view.step,
                        time: view.time,
                        centroid_x: cx,
                        peak_bz_self: view.self_field.map(|f| f.peak_bz()),
                    });
                    if keep_fields {
                        out.bz_pre = view.self_field.map(|f| f.bz.clone());
                    }
                }
            }
            // transmitted norm and its change over the last step
            let (mass, cx) = region_centroid(view.state, x_back);
            if post.is_none() && view.time >= t_post {
                post = Some(Snapshot {
                    label: "post_grating".into(),
                    step: view.step,
                    time: view.time,
                    centroid_x: cx,
                    peak_bz_self: view.self_field.map(|f| f.peak_bz()),
                });
                if keep_fields {
                    out.bz_post = view.self_field.map(|f| f.bz.clone());
                }
            }
            let gain = mass - last_mass;
            last_mass = mass;
            if steps.is_some() || view.time < t_arrive {
                return Flow::Continue;
            }
            let past = mass <= thr || cx >= x_back + POST_SIGMAS * sx;
            // either the slab has emptied, or the transmitted norm has peaked
            // (inflow from the slab no longer outpaces the absorber)
            let inside = view.state.norm_in_x_range(x_front, x_back);
            if past && (inside < thr || gain <= 0.0) {
                cleared = true;
                residual = inside;
                Flow::Stop
            } else {
                Flow::Continue
            }
        })?;
        if steps.is_none() && !cleared {
            return Err(Error::Stale(format!(
                "packet did not clear the grating within {} steps",
                cfg.plan.max_steps
            )));
        }
        out.records = report.records;
        let (_, cx) = region_centroid(state, x_back);
        let end = Snapshot {
            label: "transit_end".into(),
            step: prop.steps_taken(),
            time: prop.time(),
            centroid_x: cx,
            peak_bz_self: prop.self_field().map(|f| f.peak_bz()),
        };
        if post.is_none() {
            // evolution ended before the packet reached the snapshot plane
            post = Some(Snapshot {
                label: "post_grating".into(),
                ..end.clone()
            });
            if keep_fields {
                out.bz_post = prop.self_field().map(|f| f.bz.clone());
            }
        }
        out.snapshots.extend(pre);
        out.snapshots.extend(post);
        out.snapshots.push(end);
        if cleared {
            out.transmission = Some(state.norm_in_x_range(x_back, f64::INFINITY));
            if residual >= thr {
                out.notes.push(format!(
                    "snapshot at the transmitted-norm peak with {residual:.3e} still inside the slab"
                ));
            }
        } else {
            let inside = state.norm_in_x_range(x_front, x_back);
            if inside < thr {
                out.transmission = Some(state.norm_in_x_range(x_back, f64::INFINITY));
            } else {
                out.notes.push(format!(
                    "transmission undefined: {inside:.3e} of the norm is still inside the slab"
                ));
            }
        }
    }

    if b2_resolved {
        let stage = FieldStage::b2(cfg.b2.gradient, cfg.b2.length, StageMode::GridResolved);
        prop.run_stage(state, &stage, v, 0.0)?;
    }
    Ok(out)
}

/// Columns entering the screen analysis: everything past the grating after a
/// transit, the whole state otherwise.
fn screen_slice(state: &SpinorField, layout: &Layout, ran: bool) -> Result<TransverseSlice> {
    if ran {
        TransverseSlice::downstream(state, layout.x_back)
    } else {
        TransverseSlice::downstream(state, f64::NEG_INFINITY)
    }
}

fn husimi_column(state: &SpinorField, layout: &Layout, ran: bool) -> TransverseSlice {
    let x_lo = if ran { layout.x_back } else { f64::NEG_INFINITY };
    let (_, cx) = region_centroid(state, x_lo);
    let x = if cx.is_finite() { cx } else { layout.x_back };
    TransverseSlice::column(state, x)
}

fn ky_axis(cfg: &ScenarioConfig, dy: f64) -> Result<KyAxis> {
    let h = cfg.husimi.as_ref().expect("husimi configured");
    let band = 0.95 * std::f64::consts::PI / dy;
    KyAxis::for_grid(dy, h.ky_max.unwrap_or(band).min(band), h.ky_step)
}

fn collect<T>(r: Result<T>, what: &str, notes: &mut Vec<String>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{what}: {e}"));
            None
        }
    }
}

struct Writer {
    dir: PathBuf,
    entries: Vec<OutputEntry>,
}

impl Writer {
    fn record(&mut self, name: &str) -> Result<()> {
        let path = self.dir.join(name);
        let bytes = fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
        self.entries.push(OutputEntry {
            file: name.into(),
            bytes,
            sha256: io::sha256_file(&path)?,
        });
        Ok(())
    }

    fn field(&mut self, name: &str, tag: &str, grid: &Grid2D, values: &[f64]) -> Result<()> {
        let header = DumpHeader {
            nx: grid.nx,
            ny: grid.ny,
            dx: grid.dx,
            dy: grid.dy,
            tag: tag.into(),
        };
        io::write_field_dump(&self.dir.join(name), &header, values)?;
        self.record(name)
    }
}

/// Runs `cfg`, writing outputs and `manifest.json` into `opts.out_dir`.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutcome> {
    match opts.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
            pool.install(|| run_inner(cfg, &opts.out_dir))
        }
        None => run_inner(cfg, &opts.out_dir),
    }
}

fn run_inner(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunOutcome> {
    let started = Instant::now();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let layout = plan_layout(cfg)?;
    let derived = derive(cfg, &layout);
    let initial = init_gaussian_spinor(&layout.grid, &layout.packet)?;
    let mut writer = Writer {
        dir: out_dir.to_path_buf(),
        entries: Vec::new(),
    };
    let mut metrics = Metrics::default();
    let mut snapshots = Vec::new();
    let mut records = Vec::new();
    let mut profile_out = None;
    let mut husimi_out = None;
    let (mut bz_pre, mut bz_post) = (None, None);
    let v = cfg.packet.velocity;
    let l_gs = cfg.screen.distance;
    let pad = cfg.screen.pad;

    let sweeping = matches!(cfg.scenario, ScenarioKind::B1Sweep | ScenarioKind::HusimiSweep);
    let echo_only = cfg.plan.steps == Some(0) && !cfg.b1.enabled && !cfg.b2.enabled && !sweeping;

    if echo_only {
        // nothing to evolve: the manifest records the initial state alone
    } else if cfg.scenario == ScenarioKind::B1Sweep {
        if cfg.b1.length <= 0.0 {
            return Err(Error::Config("b1_sweep needs a positive b1.length".into()));
        }
        let b_pi = b_pi_for_velocity(cfg.b1.length, v);
        let (p_up, p_dn) = populations(&initial);
        let mut rows = Vec::new();
        for &chi in &cfg.sweep.chi {
            let stage = B1Config {
                enabled: true,
                field: chi * b_pi,
                ..cfg.b1.clone()
            };
            let mut state = initial.clone();
            let t = transit(cfg, &layout, &mut state, &stage)?;
            let profile = far_field(&screen_slice(&state, &layout, t.ran)?, l_gs, v, pad)?;
            let p_flip = if p_up >= p_dn {
                flip_probability(&profile.i_up, &profile.i_dn)?
            } else {
                flip_probability(&profile.i_dn, &profile.i_up)?
            };
            let point = FlipPoint {
                chi,
                p_flip,
                p_flip_analytic: flip_law(chi),
            };
            rows.push(vec![point.chi, point.p_flip, point.p_flip_analytic]);
            metrics.flip_sweep.push(point);
        }
        metrics.max_flip_error = metrics
            .flip_sweep
            .iter()
            .map(|p| (p.p_flip - p.p_flip_analytic).abs())
            .reduce(f64::max);
        io::write_table(&out_dir.join("flip.csv"), &["chi", "P_flip", "P_flip_analytic"], &rows)?;
        writer.record("flip.csv")?;
    } else {
        let mut state = initial.clone();
        let t = transit(cfg, &layout, &mut state, &cfg.b1)?;
        metrics.transmission = t.transmission;
        metrics.notes.extend(t.notes);
        metrics.peak_bz_pre = t.snapshots.iter().find(|s| s.label == "pre_grating").and_then(|s| s.peak_bz_self);
        metrics.peak_bz_post = t.snapshots.iter().find(|s| s.label == "post_grating").and_then(|s| s.peak_bz_self);
        snapshots = t.snapshots;
        records = t.records;
        let ran = t.ran;
        let analytic_b2 = cfg.b2.enabled && cfg.b2.mode == StageMode::Analytic;

        let base_slice = screen_slice(&state, &layout, ran)?;
        let base_column = cfg.husimi.as_ref().map(|_| husimi_column(&state, &layout, ran));

        let mut slice = base_slice.clone();
        let mut column = base_column.clone();
        if analytic_b2 {
            slice.apply_b2_phase(cfg.b2.gradient, cfg.b2.length, v, 0.0)?;
            if let Some(c) = column.as_mut() {
                c.apply_b2_phase(cfg.b2.gradient, cfg.b2.length, v, 0.0)?;
            }
        }
        let profile = far_field(&slice, l_gs, v, pad)?;
        let notes = &mut metrics.notes;
        metrics.channel_fractions = collect(profile.channel_fractions(), "channel fractions", notes).map(|(a, b)| [a, b]);
        metrics.p_flip_y = collect(profile.flip_probability_y(), "sigma_y flip", notes);
        metrics.centroid_up = collect(profile.centroid(Spin::Up), "up centroid", notes);
        metrics.centroid_dn = collect(profile.centroid(Spin::Down), "down centroid", notes);
        if let Some(gr) = &cfg.grating {
            metrics.fringe_width = collect(fringe_width(&profile), "fringe width", notes);
            metrics.fringe_ratio = metrics
                .fringe_width
                .map(|w| w * gr.period / (cfg.packet.lambda * l_gs));
        }
        io::write_profile(&out_dir.join("profile.csv"), &profile)?;
        writer.record("profile.csv")?;

        if let (Some(h), Some(col)) = (&cfg.husimi, &column) {
            let axis = ky_axis(cfg, col.dy)?;
            let y0s = y0_axis(col, h.stride);
            let map = husimi(col, h.sigma, &y0s, &axis)?;
            metrics.ky_up = collect(mean_ky(&map, Spin::Up), "up Husimi centroid", &mut metrics.notes);
            metrics.ky_dn = collect(mean_ky(&map, Spin::Down), "down Husimi centroid", &mut metrics.notes);
            io::write_husimi(&out_dir.join("husimi_up.f64"), &map, Spin::Up)?;
            writer.record("husimi_up.f64")?;
            io::write_husimi(&out_dir.join("husimi_dn.f64"), &map, Spin::Down)?;
            writer.record("husimi_dn.f64")?;

            if cfg.scenario == ScenarioKind::HusimiSweep {
                if cfg.b2.mode != StageMode::Analytic {
                    return Err(Error::Config("husimi_sweep imprints analytically; set b2.mode = \"analytic\"".into()));
                }
                let base_col = base_column.as_ref().expect("column exists when husimi is on");
                let mut rows = Vec::new();
                for &l in &cfg.sweep.l_b2 {
                    let mut s = base_slice.clone();
                    let mut c = base_col.clone();
                    s.apply_b2_phase(cfg.b2.gradient, l, v, 0.0)?;
                    c.apply_b2_phase(cfg.b2.gradient, l, v, 0.0)?;
                    let p = far_field(&s, l_gs, v, pad)?;
                    let m = husimi(&c, h.sigma, &y0s, &axis)?;
                    let point = SweepPoint {
                        l_b2: l,
                        kick_up: zeeman_kick(cfg.b2.gradient, l, v),
                        ky_up: mean_ky(&m, Spin::Up).ok(),
                        ky_dn: mean_ky(&m, Spin::Down).ok(),
                        centroid_up: p.centroid(Spin::Up).ok(),
                        centroid_dn: p.centroid(Spin::Down).ok(),
                        deflection_analytic: analytic_deflection(cfg.b2.gradient, l, v, l_gs),
                    };
                    let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
                    rows.push(vec![
                        point.l_b2,
                        point.kick_up,
                        nan(point.ky_up),
                        nan(point.ky_dn),
                        nan(point.centroid_up),
                        nan(point.centroid_dn),
                        point.deflection_analytic,
                    ]);
                    metrics.husimi_sweep.push(point);
                }
                let fit = |f: fn(&SweepPoint) -> Option<f64>| {
                    let pts: Option<Vec<(f64, f64)>> = metrics.husimi_sweep.iter().map(|p| f(p).map(|k| (p.l_b2, k))).collect();
                    let (ls, ys): (Vec<f64>, Vec<f64>) = pts.filter(|v| v.len() >= 2)?.into_iter().unzip();
                    let (slope, r2) = fit_through_origin(&ls, &ys);
                    Some(LineFit { slope, r2 })
                };
                metrics.fit_up = fit(|p| p.ky_up);
                metrics.fit_dn = fit(|p| p.ky_dn);
                io::write_table(
                    &out_dir.join("husimi_sweep.csv"),
                    &["l_b2_m", "kick_up", "ky_up", "ky_dn", "centroid_up_m", "centroid_dn_m", "deflection_analytic_m"],
                    &rows,
                )?;
                writer.record("husimi_sweep.csv")?;
            }
            husimi_out = Some(map);
        }

        if cfg.output.field_dumps {
            let g = &layout.grid;
            if let Some(f) = &t.bz_pre {
                writer.field("bz_self_pre.f64", "bz_self", g, &f.values)?;
            }
            if let Some(f) = &t.bz_post {
                writer.field("bz_self_post.f64", "bz_self", g, &f.values)?;
            }
            writer.field("density_post.f64", "density", g, &state.density().values)?;
        }
        bz_pre = t.bz_pre;
        bz_post = t.bz_post;
        profile_out = Some(profile);
    }

    let manifest = RunManifest {
        scenario: cfg.scenario.name().into(),
        variant: match cfg.variant {
            super::presets::Variant::Full => "full".into(),
            super::presets::Variant::Fast => "fast".into(),
        },
        crate_version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash(cfg),
        config: cfg.clone(),
        derived,
        initial_state: StateSummary::of(&initial),
        snapshots,
        metrics,
        records,
        outputs: writer.entries,
        wall_clock_s: started.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
    };
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(RunOutcome {
        manifest,
        out_dir: out_dir.to_path_buf(),
        profile: profile_out,
        husimi: husimi_out,
        bz_pre,
        bz_post,
    })
}

//! Scenario configuration: TOML text merged over a preset table, strictly
//! deserialized, then converted to SI and validated.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::presets::{merge_into, preset_table, ScenarioKind, Variant};
use super::units::{Dimension, Quantity};
use crate::analysis::b_pi_for_velocity;
use crate::constants::CONSTANTS;
use crate::error::{Error, Result};
use crate::potentials::AbsorberSpec;
use crate::propagator::{H2Terms, SelfFieldCoupling, StageMode};
use crate::selffield::{CurlMethod, CurrentTerms};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: ScenarioKind,
    variant: Variant,
    grid: RawGrid,
    packet: RawPacket,
    grating: RawGrating,
    absorber: RawAbsorber,
    screen: RawScreen,
    b1: RawB1,
    b2: RawB2,
    plan: RawPlan,
    sweep: RawSweep,
    husimi: RawHusimi,
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    points_per_wavelength: f64,
    spacing: Option<Quantity>,
    downstream: Quantity,
    extent_x: Option<Quantity>,
    extent_y: Option<Quantity>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPacket {
    lambda: Quantity,
    velocity: Option<Quantity>,
    sigma_x: Quantity,
    sigma_y: Quantity,
    spin: Option<String>,
    alpha: Option<[f64; 2]>,
    beta: Option<[f64; 2]>,
    approach: Quantity,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrating {
    enabled: bool,
    period: Quantity,
    open_fraction: f64,
    thickness: Quantity,
    barrier: Quantity,
    image_scale: f64,
    n_slits: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAbsorber {
    width_frac: f64,
    floor: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScreen {
    distance: Quantity,
    pad: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawB1 {
    enabled: bool,
    chi: Option<f64>,
    field: Option<Quantity>,
    length: Quantity,
    mode: StageMode,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawB2 {
    enabled: bool,
    gradient: Quantity,
    length: Quantity,
    mode: StageMode,
    #[serde(default)]
    terms: H2Terms,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    dt: Quantity,
    steps: Option<usize>,
    max_steps: usize,
    self_field: bool,
    #[serde(default)]
    current_terms: CurrentTerms,
    #[serde(default)]
    coupling: SelfFieldCoupling,
    curl: CurlMethod,
    record_every: usize,
    #[serde(default = "one")]
    self_field_every: usize,
    clear_threshold: f64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    chi: Vec<f64>,
    l_b2: Vec<Quantity>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHusimi {
    enabled: bool,
    sigma: Option<Quantity>,
    stride: usize,
    ky_step: Quantity,
    ky_max: Option<Quantity>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
    field_dumps: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridConfig {
    pub spacing: f64,
    pub downstream: f64,
    pub extent_x: Option<f64>,
    pub extent_y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PacketConfig {
    pub lambda: f64,
    pub velocity: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// `(re, im)` of the up and down amplitudes.
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    /// Distance from the packet centre to the grating front face.
    pub approach: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GratingConfig {
    pub period: f64,
    pub open_fraction: f64,
    pub thickness: f64,
    pub barrier_ev: f64,
    pub image_scale: f64,
    pub n_slits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenConfig {
    pub distance: f64,
    pub pad: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct B1Config {
    pub enabled: bool,
    pub field: f64,
    pub length: f64,
    pub mode: StageMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct B2Config {
    pub enabled: bool,
    pub gradient: f64,
    pub length: f64,
    pub mode: StageMode,
    pub terms: H2Terms,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanConfig {
    pub dt: f64,
    /// `None` runs until the packet has cleared the grating.
    pub steps: Option<usize>,
    pub max_steps: usize,
    pub self_field: bool,
    pub current_terms: CurrentTerms,
    pub coupling: SelfFieldCoupling,
    pub curl: CurlMethod,
    pub record_every: usize,
    pub self_field_every: usize,
    pub clear_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub chi: Vec<f64>,
    pub l_b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HusimiConfig {
    pub sigma: f64,
    pub stride: usize,
    pub ky_step: f64,
    /// Half-width of the `k_y` axis; `None` spans the grid's full band.
    pub ky_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub field_dumps: bool,
}

/// Fully resolved scenario, all values in SI.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub variant: Variant,
    pub grid: GridConfig,
    pub packet: PacketConfig,
    pub grating: Option<GratingConfig>,
    pub absorber: AbsorberSpec,
    pub screen: ScreenConfig,
    pub b1: B1Config,
    pub b2: B2Config,
    pub plan: PlanConfig,
    pub sweep: SweepConfig,
    pub husimi: Option<HusimiConfig>,
    pub output: OutputConfig,
}

/// Where a config's text came from, in merge order after the preset.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources {
    pub text: String,
    pub preset: Option<String>,
    pub overrides: Vec<String>,
}

fn toml_error(e: toml::de::Error) -> Error {
    Error::parse("<input>", e.message().to_string())
}

/// Parses one `key.path=value` override into a nested table. Values that are
/// not valid TOML are taken as strings, so `packet.lambda=3 nm` works unquoted.
pub fn parse_override(spec: &str) -> Result<toml::Table> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| Error::parse(spec, "override must look like key.path=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(|s| s.trim().is_empty()) {
        return Err(Error::parse(spec, "override key is empty"));
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut node = parsed;
    for part in key.split('.').rev() {
        let mut t = toml::Table::new();
        t.insert(part.trim().to_string(), node);
        node = toml::Value::Table(t);
    }
    match node {
        toml::Value::Table(t) => Ok(t),
        _ => unreachable!("override nesting always yields a table"),
    }
}

fn top_level_str(tables: &[&toml::Table], key: &str) -> Option<String> {
    tables
        .iter()
        .rev()
        .find_map(|t| t.get(key).and_then(|v| v.as_str()).map(str::to_string))
}

/// Merged TOML table for the given sources, before strict deserialization.
pub fn merged_table(src: &ConfigSources) -> Result<toml::Table> {
    let file: toml::Table = src.text.parse().map_err(toml_error)?;
    let overrides = src
        .overrides
        .iter()
        .map(|o| parse_override(o))
        .collect::<Result<Vec<_>>>()?;
    let mut layers: Vec<&toml::Table> = vec![&file];
    layers.extend(overrides.iter());

    // an explicit preset flag wins over the file, overrides win over both
    let override_refs: Vec<&toml::Table> = overrides.iter().collect();
    let scenario_name = top_level_str(&override_refs, "scenario")
        .or_else(|| src.preset.clone())
        .or_else(|| top_level_str(&[&file], "scenario"))
        .unwrap_or_else(|| "field_free".into());
    let kind = ScenarioKind::from_name(&scenario_name)
        .ok_or_else(|| Error::parse("scenario", format!("unknown scenario `{scenario_name}`")))?;
    let variant_name = top_level_str(&layers, "variant").unwrap_or_else(|| "full".into());
    let variant = Variant::from_name(&variant_name)
        .ok_or_else(|| Error::parse("variant", format!("unknown variant `{variant_name}`, expected full or fast")))?;

    let mut table = preset_table(kind, variant);
    // explicit amplitudes replace the preset's named spin state
    let sets = |t: &toml::Table, key: &str| t.get("packet").and_then(|p| p.get(key)).is_some();
    if layers.iter().any(|t| sets(t, "alpha") || sets(t, "beta")) && !layers.iter().any(|t| sets(t, "spin")) {
        if let Some(toml::Value::Table(p)) = table.get_mut("packet") {
            p.remove("spin");
        }
    }
    merge_into(&mut table, &file);
    for o in &overrides {
        merge_into(&mut table, o);
    }
    table.insert("scenario".into(), toml::Value::String(kind.name().into()));
    table.insert("variant".into(), toml::Value::String(variant_name));
    Ok(table)
}

/// Parses config text (merged over its preset) into a validated config.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    load_config(&ConfigSources {
        text: text.to_string(),
        ..Default::default()
    })
}

pub fn load_config(src: &ConfigSources) -> Result<ScenarioConfig> {
    let table = merged_table(src)?;
    let raw: RawConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        Error::parse(path, e.into_inner().message().to_string())
    })?;
    resolve(raw)
}

fn require(cond: bool, path: &str, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::parse(path, msg))
    }
}

fn positive(q: &Quantity, dim: Dimension, path: &str) -> Result<f64> {
    let v = q.si(dim, path)?;
    require(v > 0.0, path, format!("must be positive, got {v}"))?;
    Ok(v)
}

fn spin_amplitudes(name: &str) -> Option<([f64; 2], [f64; 2])> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    Some(match name {
        "up" | "+z" => ([1.0, 0.0], [0.0, 0.0]),
        "down" | "-z" => ([0.0, 0.0], [1.0, 0.0]),
        "+x" => ([h, 0.0], [h, 0.0]),
        "-x" => ([h, 0.0], [-h, 0.0]),
        "+y" => ([h, 0.0], [0.0, h]),
        "-y" => ([h, 0.0], [0.0, -h]),
        _ => return None,
    })
}

fn resolve(raw: RawConfig) -> Result<ScenarioConfig> {
    let p = &raw.packet;
    let lambda = positive(&p.lambda, Dimension::Length, "packet.lambda")?;
    let velocity = match &p.velocity {
        Some(q) => positive(q, Dimension::Velocity, "packet.velocity")?,
        None => CONSTANTS.de_broglie_velocity(lambda),
    };
    let (alpha, beta) = match (&p.spin, p.alpha, p.beta) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            return Err(Error::parse("packet.spin", "give either `spin` or `alpha`/`beta`, not both"))
        }
        (Some(s), None, None) => {
            spin_amplitudes(s).ok_or_else(|| Error::parse("packet.spin", format!("unknown spin state `{s}`")))?
        }
        (None, a, b) => (a.unwrap_or([0.0, 0.0]), b.unwrap_or([0.0, 0.0])),
    };
    let n2 = alpha[0].powi(2) + alpha[1].powi(2) + beta[0].powi(2) + beta[1].powi(2);
    require(
        (n2 - 1.0).abs() <= 1e-12,
        "packet.alpha",
        format!("|alpha|^2 + |beta|^2 must be 1, got {n2}"),
    )?;
    let packet = PacketConfig {
        lambda,
        velocity,
        sigma_x: positive(&p.sigma_x, Dimension::Length, "packet.sigma_x")?,
        sigma_y: positive(&p.sigma_y, Dimension::Length, "packet.sigma_y")?,
        alpha,
        beta,
        approach: positive(&p.approach, Dimension::Length, "packet.approach")?,
    };

    let g = &raw.grid;
    let spacing = match &g.spacing {
        Some(q) => positive(q, Dimension::Length, "grid.spacing")?,
        None => {
            require(
                g.points_per_wavelength >= 4.0,
                "grid.points_per_wavelength",
                format!("need at least 4 points per wavelength, got {}", g.points_per_wavelength),
            )?;
            lambda / g.points_per_wavelength
        }
    };
    let grid = GridConfig {
        spacing,
        downstream: positive(&g.downstream, Dimension::Length, "grid.downstream")?,
        extent_x: g.extent_x.as_ref().map(|q| positive(q, Dimension::Length, "grid.extent_x")).transpose()?,
        extent_y: g.extent_y.as_ref().map(|q| positive(q, Dimension::Length, "grid.extent_y")).transpose()?,
    };

    let gr = &raw.grating;
    require(
        gr.open_fraction > 0.0 && gr.open_fraction < 1.0,
        "grating.open_fraction",
        format!("must lie in (0, 1), got {}", gr.open_fraction),
    )?;
    require(
        (0.0..1.0).contains(&gr.image_scale),
        "grating.image_scale",
        format!("must lie in [0, 1), got {}", gr.image_scale),
    )?;
    let barrier = gr.barrier.si(Dimension::Energy, "grating.barrier")?;
    require(barrier >= 0.0, "grating.barrier", "must be non-negative")?;
    let grating_cfg = GratingConfig {
        period: positive(&gr.period, Dimension::Length, "grating.period")?,
        open_fraction: gr.open_fraction,
        thickness: positive(&gr.thickness, Dimension::Length, "grating.thickness")?,
        barrier_ev: barrier / CONSTANTS.ev(),
        image_scale: gr.image_scale,
        n_slits: gr.n_slits,
    };
    // zero slits, or a grating with neither barrier nor image force, is free flight
    let grating = (gr.enabled && gr.n_slits > 0 && (barrier > 0.0 || gr.image_scale > 0.0)).then_some(grating_cfg);

    let absorber = AbsorberSpec {
        width_frac: raw.absorber.width_frac,
        floor: raw.absorber.floor,
    };
    absorber.validate().map_err(|e| Error::parse("absorber", e.to_string()))?;

    let screen = ScreenConfig {
        distance: positive(&raw.screen.distance, Dimension::Length, "screen.distance")?,
        pad: raw.screen.pad.max(1),
    };

    let b1_length = raw.b1.length.si(Dimension::Length, "b1.length")?;
    require(b1_length >= 0.0, "b1.length", "must be non-negative")?;
    let b1_field = match (&raw.b1.field, raw.b1.chi) {
        (Some(q), _) => q.si(Dimension::Field, "b1.field")?,
        (None, Some(chi)) if b1_length > 0.0 => chi * b_pi_for_velocity(b1_length, velocity),
        (None, _) => 0.0,
    };
    let b1 = B1Config {
        enabled: raw.b1.enabled,
        field: b1_field,
        length: b1_length,
        mode: raw.b1.mode,
    };

    let b2_length = raw.b2.length.si(Dimension::Length, "b2.length")?;
    require(b2_length >= 0.0, "b2.length", "must be non-negative")?;
    let b2 = B2Config {
        enabled: raw.b2.enabled,
        gradient: raw.b2.gradient.si(Dimension::Gradient, "b2.gradient")?,
        length: b2_length,
        mode: raw.b2.mode,
        terms: raw.b2.terms,
    };

    let pl = &raw.plan;
    require(
        pl.clear_threshold > 0.0 && pl.clear_threshold < 1.0,
        "plan.clear_threshold",
        "must lie in (0, 1)",
    )?;
    require(pl.self_field_every >= 1, "plan.self_field_every", "must be at least 1")?;
    let plan = PlanConfig {
        dt: positive(&pl.dt, Dimension::Time, "plan.dt")?,
        steps: pl.steps,
        max_steps: pl.max_steps,
        self_field: pl.self_field,
        current_terms: pl.current_terms,
        coupling: pl.coupling,
        curl: pl.curl,
        record_every: pl.record_every,
        self_field_every: pl.self_field_every,
        clear_threshold: pl.clear_threshold,
    };

    let sweep = SweepConfig {
        chi: raw.sweep.chi.clone(),
        l_b2: raw
            .sweep
            .l_b2
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let v = q.si(Dimension::Length, &format!("sweep.l_b2[{i}]"))?;
                require(v >= 0.0, &format!("sweep.l_b2[{i}]"), "must be non-negative")?;
                Ok(v)
            })
            .collect::<Result<_>>()?,
    };
    require(sweep.chi.iter().all(|c| c.is_finite()), "sweep.chi", "values must be finite")?;

    let h = &raw.husimi;
    let husimi = if h.enabled {
        Some(HusimiConfig {
            sigma: match &h.sigma {
                Some(q) => positive(q, Dimension::Length, "husimi.sigma")?,
                None => packet.sigma_y,
            },
            stride: h.stride.max(1),
            ky_step: positive(&h.ky_step, Dimension::Wavenumber, "husimi.ky_step")?,
            ky_max: h
                .ky_max
                .as_ref()
                .map(|q| positive(q, Dimension::Wavenumber, "husimi.ky_max"))
                .transpose()?,
        })
    } else {
        None
    };

    Ok(ScenarioConfig {
        scenario: raw.scenario,
        variant: raw.variant,
        grid,
        packet,
        grating,
        absorber,
        screen,
        b1,
        b2,
        plan,
        sweep,
        husimi,
        output: OutputConfig {
            dir: raw.output.dir.map(PathBuf::from),
            field_dumps: raw.output.field_dumps,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_laboratory_preset() {
        let c = parse_config("").unwrap();
        assert_eq!(c.scenario, ScenarioKind::FieldFree);
        assert!((c.packet.lambda - 2.73e-10).abs() < 1e-22);
        let g = c.grating.as_ref().unwrap();
        assert!((g.period - 50e-9).abs() < 1e-20);
        assert!((g.barrier_ev - 1200.0).abs() < 1e-9);
        assert!((c.packet.sigma_x - 5e-9).abs() < 1e-20);
        assert!((c.packet.sigma_y - 40e-9).abs() < 1e-20);
        assert!((c.plan.dt - 9.01e-18).abs() < 1e-30);
        assert!((c.packet.velocity / 2.65e6 - 1.0).abs() < 6e-3);
        assert!((c.grid.spacing - 2.73e-11).abs() < 1e-22);
    }

    #[test]
    fn open_fraction_out_of_range_is_rejected() {
        let err = parse_config("[grating]\nopen_fraction = 1.2\n").unwrap_err();
        match err {
            Error::Parse { path, .. } => assert_eq!(path, "grating.open_fraction"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let err = parse_config("[packet]\ncolour = \"red\"\n").unwrap_err();
        match err {
            Error::Parse { path, message } => {
                assert!(path.starts_with("packet"), "{path}");
                assert!(message.contains("colour"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gradient_units() {
        let c = parse_config("scenario = \"b2_filter\"\n[b2]\ngradient = \"560 T/m\"\n").unwrap();
        assert!(c.b2.enabled);
        assert_eq!(c.b2.gradient, 560.0);
        let err = parse_config("[b2]\ngradient = \"560 T\"\n").unwrap_err();
        assert!(matches!(err, Error::Parse { ref path, .. } if path == "b2.gradient"));
    }

    #[test]
    fn overrides_and_variant() {
        let src = ConfigSources {
            text: "variant = \"fast\"\n".into(),
            preset: Some("b1_sweep".into()),
            overrides: vec!["packet.spin=+y".into(), "plan.max_steps=7".into()],
        };
        let c = load_config(&src).unwrap();
        assert_eq!(c.scenario, ScenarioKind::B1Sweep);
        assert_eq!(c.variant, Variant::Fast);
        assert!((c.packet.lambda - 2.73e-9).abs() < 1e-21);
        assert_eq!(c.plan.max_steps, 7);
        assert_eq!(c.plan.steps, Some(0));
        assert!((c.packet.beta[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn zero_slits_is_free_flight() {
        let c = parse_config("[grating]\nn_slits = 0\n").unwrap();
        assert!(c.grating.is_none());
    }

    #[test]
    fn unnormalised_spinor_is_rejected() {
        let err = parse_config("[packet]\nspin = \"up\"\nalpha = [1.0, 0.0]\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let err = parse_config("[packet]\nalpha = [1.0, 0.0]\nbeta = [1.0, 0.0]\n").unwrap_err();
        assert!(matches!(err, Error::Parse { ref path, .. } if path == "packet.alpha"));
        let c = parse_config("[packet]\nalpha = [0.6, 0.0]\nbeta = [0.0, 0.8]\n").unwrap();
        assert_eq!(c.packet.beta, [0.0, 0.8]);
    }

    #[test]
    fn bad_override_syntax() {
        assert!(parse_override("novalue").is_err());
        let t = parse_override("a.b=3 nm").unwrap();
        assert_eq!(t["a"]["b"].as_str(), Some("3 nm"));
        let t = parse_override("a=0.5").unwrap();
        assert_eq!(t["a"].as_float(), Some(0.5));
    }
}

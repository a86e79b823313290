//! Built-in scenario tables. A run starts from the base table, applies the
//! scenario patch, then the `fast` patch when requested.

use serde::{Deserialize, Serialize};

/// Laboratory-scale parameters: 2.73 Å electrons through a 50 nm grating.
const BASE: &str = r#"
scenario = "field_free"
variant = "full"

[grid]
points_per_wavelength = 10.0
downstream = "70 nm"

[packet]
lambda = "2.73 angstrom"
sigma_x = "5 nm"
sigma_y = "40 nm"
spin = "up"
approach = "25 nm"

[grating]
enabled = true
period = "50 nm"
open_fraction = 0.5
thickness = "25 nm"
barrier = "1200 eV"
image_scale = 0.35
n_slits = 9

[absorber]
width_frac = 0.05
floor = 0.0

[screen]
distance = "0.5 m"
pad = 4

[b1]
enabled = false
chi = 1.0
length = "0.1 m"
mode = "analytic"

[b2]
enabled = false
gradient = "560 T/m"
length = "50 m"
mode = "analytic"

[plan]
dt = "9.01e-18 s"
max_steps = 40000
self_field = true
curl = "spectral"
record_every = 10
clear_threshold = 1e-4

[sweep]
chi = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0]
l_b2 = ["10 m", "20 m", "30 m", "40 m", "50 m"]

[husimi]
enabled = false
stride = 4
ky_step = "1e7 1/m"

[output]
field_dumps = false
"#;

/// Desk-scale variant: wavelength ×10 at fixed grating geometry. Energies and
/// image strength follow the 1/λ² kinetic scale. The gradient drops by 100 so
/// the kick keeps its ratio to k₀ (and the screen deflection over the 10×
/// longer transit is unchanged).
///
/// The time step is a quarter of the scaled 9.01e-16 s. At the scaled step the
/// barrier phase is 16 rad per step and the hard wall leaks (T ≈ 0.64 for an
/// open fraction of 0.5); at a quarter it is 4 rad and T is within 0.002 of
/// the dt → 0 limit. The self-field is still rebuilt every 9.01e-16 s.
const FAST: &str = r#"
variant = "fast"

[packet]
lambda = "2.73 nm"

[grating]
barrier = "12 eV"
image_scale = 0.0035

[b2]
gradient = "5.6 T/m"

[plan]
dt = "2.2525e-16 s"
self_field_every = 4
max_steps = 16000
record_every = 40
"#;

const SELFFIELD: &str = r#"
scenario = "selffield"
[output]
field_dumps = true
"#;

const FIELD_FREE: &str = r#"
scenario = "field_free"
"#;

const B1_SWEEP: &str = r#"
scenario = "b1_sweep"
[plan]
steps = 0
self_field = false
[b1]
enabled = true
"#;

const B2_FILTER: &str = r#"
scenario = "b2_filter"
[packet]
spin = "+x"
[b2]
enabled = true
[husimi]
enabled = true
"#;

const HUSIMI_SWEEP: &str = r#"
scenario = "husimi_sweep"
[packet]
spin = "+x"
[husimi]
enabled = true
"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Selffield,
    FieldFree,
    B1Sweep,
    B2Filter,
    HusimiSweep,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Selffield,
        ScenarioKind::FieldFree,
        ScenarioKind::B1Sweep,
        ScenarioKind::B2Filter,
        ScenarioKind::HusimiSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Selffield => "selffield",
            ScenarioKind::FieldFree => "field_free",
            ScenarioKind::B1Sweep => "b1_sweep",
            ScenarioKind::B2Filter => "b2_filter",
            ScenarioKind::HusimiSweep => "husimi_sweep",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    fn patch(self) -> &'static str {
        match self {
            ScenarioKind::Selffield => SELFFIELD,
            ScenarioKind::FieldFree => FIELD_FREE,
            ScenarioKind::B1Sweep => B1_SWEEP,
            ScenarioKind::B2Filter => B2_FILTER,
            ScenarioKind::HusimiSweep => HUSIMI_SWEEP,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    Fast,
}

impl Variant {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Variant::Full),
            "fast" => Some(Variant::Fast),
            _ => None,
        }
    }
}

/// Recursively overlays `top` onto `base`; tables merge, everything else replaces.
pub fn merge_into(base: &mut toml::Table, top: &toml::Table) {
    for (k, v) in top {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge_into(b, t),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn parse_table(text: &str) -> toml::Table {
    text.parse().expect("built-in preset tables are valid TOML")
}

/// Full default table for `kind` at `variant`.
pub fn preset_table(kind: ScenarioKind, variant: Variant) -> toml::Table {
    let mut t = parse_table(BASE);
    merge_into(&mut t, &parse_table(kind.patch()));
    if variant == Variant::Fast {
        merge_into(&mut t, &parse_table(FAST));
    }
    t
}

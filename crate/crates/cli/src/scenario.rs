//! Scenario files: JSON schema, loading, and resolution into core types.

use serde::{Deserialize, Serialize};
use sheetspace::ambient::{coordinate_names, MetricSpace};
use sheetspace::expr::Expression;
use sheetspace::flows::FlowConfig;
use sheetspace::grid::{Param, ParamDomain, MIN_SAMPLES};
use sheetspace::kaehler::Upsilon;
use sheetspace::twistor::{chart_names, ChartForm};
use sheetspace::verify::SweepSpec;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

pub const DEFAULT_SEED: u64 = 42;
pub const SEED_ENV: &str = "SHEETSPACE_SEED";

/// Invalid input, located by a JSON pointer into the scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct InputError {
    pub pointer: String,
    pub message: String,
}

impl InputError {
    pub fn new(pointer: impl Into<String>, message: impl Into<String>) -> InputError {
        InputError { pointer: pointer.into(), message: message.into() }
    }
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "{at}: {}", self.message)
    }
}

impl std::error::Error for InputError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    Euclidean,
    Minkowski,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricBlock {
    #[serde(default)]
    pub builtin: Option<Builtin>,
    #[serde(default)]
    pub dim: Option<usize>,
    /// Row-major matrix of expressions in x0 … x(n−1).
    #[serde(default)]
    pub entries: Option<Vec<Vec<String>>>,
    /// (negative, positive) counts; required with `entries`.
    #[serde(default)]
    pub signature: Option<(usize, usize)>,
    /// Conformal factor applied to the builtin or custom metric.
    #[serde(default)]
    pub conformal: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBlock {
    pub name: String,
    pub samples: usize,
    #[serde(default)]
    pub periodic: bool,
    /// Defaults to [0, 2π] for periodic parameters.
    #[serde(default)]
    pub range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SheetBlock {
    pub params: Vec<ParamBlock>,
    pub map: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    Validate,
    Compatibility,
    Domega,
    Nijenhuis,
    Dlambda,
    LiftTheta,
    Legendrian,
    Levi,
    Observable,
    Flow,
}

impl CheckName {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::Validate => "validate",
            CheckName::Compatibility => "compatibility",
            CheckName::Domega => "domega",
            CheckName::Nijenhuis => "nijenhuis",
            CheckName::Dlambda => "dlambda",
            CheckName::LiftTheta => "lift_theta",
            CheckName::Legendrian => "legendrian",
            CheckName::Levi => "levi",
            CheckName::Observable => "observable",
            CheckName::Flow => "flow",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default)]
    pub eps: Option<Vec<f64>>,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub expected_slope: Option<f64>,
    #[serde(default)]
    pub slope_tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermBlock {
    /// Chart coordinates x_i, u_i, v_i of the wedge factors.
    pub indices: Vec<String>,
    pub coeff: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormBlock {
    pub terms: Vec<TermBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckBlock {
    pub name: CheckName,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
    /// Residual bound; the default depends on the check.
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Samples per axis for refinement checks.
    #[serde(default)]
    pub grids: Option<Vec<usize>>,
    /// Coefficients of Υ for dlambda.
    #[serde(default)]
    pub upsilon: Option<Vec<String>>,
    /// γ for observable.
    #[serde(default)]
    pub form: Option<FormBlock>,
    /// Random twistor points for levi.
    #[serde(default)]
    pub points: Option<usize>,
    /// Bracket step for levi.
    #[serde(default)]
    pub step: Option<f64>,
    /// Tilt angle of the synthetic non-lift for lift_theta.
    #[serde(default)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowBlock {
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub backtracking: Option<bool>,
    #[serde(default)]
    pub log_every: Option<usize>,
    /// Samples per parameter for the flow grid; the sheet grid if absent.
    #[serde(default)]
    pub grid: Option<Vec<usize>>,
    /// Expected final area.
    #[serde(default)]
    pub target_area: Option<f64>,
    #[serde(default)]
    pub target_rel_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { dir: None, formats: default_formats() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub metric: MetricBlock,
    pub sheet: SheetBlock,
    #[serde(default)]
    pub checks: Vec<CheckBlock>,
    #[serde(default)]
    pub flow: Option<FlowBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    path.iter()
        .filter_map(|s| match s {
            Segment::Seq { index } => Some(format!("/{index}")),
            Segment::Map { key } => Some(format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { .. } | Segment::Unknown => None,
        })
        .collect()
}

impl Scenario {
    pub fn from_json(src: &str) -> Result<Scenario, InputError> {
        let de = &mut serde_json::Deserializer::from_str(src);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let message = e.inner().to_string();
            let mut at = pointer(e.path());
            // serde reports a missing field at its parent
            if let Some(field) = message.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
                at = format!("{at}/{field}");
            }
            InputError::new(at, message)
        })
    }

    pub fn load(path: &Path) -> Result<Scenario, InputError> {
        let src = std::fs::read_to_string(path).map_err(|e| InputError::new("", format!("cannot read {}: {e}", path.display())))?;
        Scenario::from_json(&src)
    }

    /// Checks and parses everything; the seed is `SHEETSPACE_SEED`, else the scenario seed, else 42.
    pub fn resolve(&self, env_seed: Option<&str>) -> Result<Resolved, InputError> {
        let env_seed = env_seed
            .map(|s| s.trim().parse::<u64>().map_err(|_| InputError::new("", format!("{SEED_ENV}={s:?} is not an unsigned integer"))))
            .transpose()?;
        let seed = env_seed.or(self.seed).unwrap_or(DEFAULT_SEED);
        let metric = Arc::new(self.resolve_metric()?);
        let n = metric.dim();
        let (domain, map) = self.resolve_sheet(n)?;
        let checks =
            self.checks.iter().enumerate().map(|(i, c)| resolve_check(c, i, n, seed, env_seed.is_some())).collect::<Result<Vec<_>, _>>()?;
        let flow = self.resolve_flow(&domain, seed)?;
        Ok(Resolved {
            name: self.name.clone().unwrap_or_else(|| "scenario".into()),
            seed,
            metric,
            domain,
            map,
            checks,
            flow,
            formats: self.output.formats.clone(),
            out_dir: self.output.dir.clone(),
        })
    }

    fn resolve_metric(&self) -> Result<MetricSpace, InputError> {
        let m = &self.metric;
        let base = match (m.builtin, &m.entries) {
            (Some(_), Some(_)) => return Err(InputError::new("/metric", "give either builtin or entries, not both")),
            (None, None) => return Err(InputError::new("/metric", "missing builtin or entries")),
            (Some(b), None) => {
                let n = m.dim.ok_or_else(|| InputError::new("/metric/dim", "missing dimension for builtin metric"))?;
                if n < 3 {
                    return Err(InputError::new("/metric/dim", format!("dimension must be at least 3, got {n}")));
                }
                let built = match b {
                    Builtin::Euclidean => MetricSpace::euclidean(n),
                    Builtin::Minkowski => MetricSpace::minkowski(n),
                };
                built.map_err(|e| InputError::new("/metric", e.to_string()))?
            }
            (None, Some(rows)) => {
                let n = rows.len();
                if n < 3 {
                    return Err(InputError::new("/metric/entries", format!("dimension must be at least 3, got {n}")));
                }
                if let Some(d) = m.dim.filter(|&d| d != n) {
                    return Err(InputError::new("/metric/dim", format!("dim {d} disagrees with a {n}x{n} entry matrix")));
                }
                let sig = m.signature.ok_or_else(|| InputError::new("/metric/signature", "required with entries"))?;
                let names = coordinate_names(n);
                let mut parsed = Vec::with_capacity(n);
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != n {
                        return Err(InputError::new(format!("/metric/entries/{i}"), format!("expected {n} entries, got {}", row.len())));
                    }
                    let r = row
                        .iter()
                        .enumerate()
                        .map(|(j, s)| parse_in(s, &names, &format!("/metric/entries/{i}/{j}")))
                        .collect::<Result<Vec<_>, _>>()?;
                    parsed.push(r);
                }
                MetricSpace::custom(parsed, sig).map_err(|e| InputError::new("/metric", e.to_string()))?
            }
        };
        match &m.conformal {
            None => Ok(base),
            Some(src) => {
                let f = parse_in(src, &coordinate_names(base.dim()), "/metric/conformal")?;
                MetricSpace::conformal(f, &base).map_err(|e| InputError::new("/metric/conformal", e.to_string()))
            }
        }
    }

    fn resolve_sheet(&self, n: usize) -> Result<(ParamDomain, Vec<Expression>), InputError> {
        let s = &self.sheet;
        if s.params.len() != n - 2 {
            return Err(InputError::new(
                "/sheet/params",
                format!("expected {} parameters (n - 2 with n = {n}), got {}", n - 2, s.params.len()),
            ));
        }
        let mut params = Vec::new();
        for (i, p) in s.params.iter().enumerate() {
            let at = format!("/sheet/params/{i}");
            if p.samples < MIN_SAMPLES {
                return Err(InputError::new(format!("{at}/samples"), format!("need at least {MIN_SAMPLES} samples, got {}", p.samples)));
            }
            let param = match (p.periodic, p.range) {
                (true, None) => Param::angle(&p.name, p.samples),
                (true, Some((a, b))) => Param::periodic(&p.name, a, b, p.samples),
                (false, Some((a, b))) => Param::bounded(&p.name, a, b, p.samples),
                (false, None) => return Err(InputError::new(format!("{at}/range"), "required for a bounded parameter")),
            };
            params.push(param);
        }
        let domain = ParamDomain::new(params).map_err(|e| InputError::new("/sheet/params", e.to_string()))?;
        if s.map.len() != n {
            return Err(InputError::new("/sheet/map", format!("expected {n} expressions (one per coordinate), got {}", s.map.len())));
        }
        let names = domain.names();
        let map =
            s.map.iter().enumerate().map(|(i, src)| parse_in(src, &names, &format!("/sheet/map/{i}"))).collect::<Result<Vec<_>, _>>()?;
        Ok((domain, map))
    }

    fn resolve_flow(&self, domain: &ParamDomain, seed: u64) -> Result<FlowSettings, InputError> {
        let b = self.flow.clone().unwrap_or_default();
        let d = FlowConfig::default();
        let config = FlowConfig {
            eta: b.eta.unwrap_or(d.eta),
            max_steps: b.max_steps.unwrap_or(d.max_steps),
            tol: b.tol.unwrap_or(d.tol),
            backtracking: b.backtracking.unwrap_or(d.backtracking),
            log_every: b.log_every.unwrap_or(d.log_every),
            seed,
        };
        config.validate().map_err(|e| InputError::new("/flow", e.to_string()))?;
        let grid = match &b.grid {
            None => domain.clone(),
            Some(g) if g.len() != domain.k() => {
                return Err(InputError::new("/flow/grid", format!("expected {} sizes, got {}", domain.k(), g.len())))
            }
            Some(g) => domain.resampled(g).map_err(|e| InputError::new("/flow/grid", e.to_string()))?,
        };
        if let Some(tol) = b.target_rel_tol.filter(|t| !(*t > 0.0)) {
            return Err(InputError::new("/flow/target_rel_tol", format!("must be positive, got {tol}")));
        }
        Ok(FlowSettings { config, grid, target_area: b.target_area, target_rel_tol: b.target_rel_tol.unwrap_or(1e-2) })
    }
}

fn parse_in(src: &str, allowed: &[String], at: &str) -> Result<Expression, InputError> {
    let e = Expression::parse(src).map_err(|e| InputError::new(at, e.to_string()))?;
    if let Some(v) = e.variables().into_iter().find(|v| !allowed.contains(v)) {
        return Err(InputError::new(at, format!("unknown variable {v:?} (expected one of {})", allowed.join(", "))));
    }
    Ok(e)
}

/// Per-check settings after defaults.
#[derive(Debug, Clone)]
pub struct ResolvedCheck {
    pub name: CheckName,
    pub sweep: SweepSpec,
    pub threshold: Option<f64>,
    pub grids: Vec<usize>,
    pub upsilon: Option<Upsilon>,
    pub form: Option<ChartForm>,
    pub points: usize,
    pub step: f64,
    pub alpha: f64,
}

fn resolve_check(c: &CheckBlock, i: usize, n: usize, seed: u64, env_override: bool) -> Result<ResolvedCheck, InputError> {
    let at = format!("/checks/{i}");
    let d = SweepSpec::default();
    let sw = c.sweep.clone().unwrap_or_default();
    let trials = sw.trials.unwrap_or(if c.name == CheckName::Compatibility { 50 } else { d.trials });
    let sweep = SweepSpec {
        eps: sw.eps.unwrap_or(d.eps),
        trials,
        seed: if env_override { seed } else { sw.seed.unwrap_or(seed) },
        expected_slope: sw.expected_slope.unwrap_or(d.expected_slope),
        slope_tol: sw.slope_tol.unwrap_or(d.slope_tol),
    };
    sweep.validate().map_err(|e| InputError::new(format!("{at}/sweep"), e.to_string()))?;
    if let Some(t) = c.threshold.filter(|t| !(*t > 0.0)) {
        return Err(InputError::new(format!("{at}/threshold"), format!("must be positive, got {t}")));
    }
    let grids = c.grids.clone().unwrap_or_else(|| vec![16, 32, 64]);
    if let Some(j) = grids.iter().position(|&g| g < MIN_SAMPLES) {
        return Err(InputError::new(format!("{at}/grids/{j}"), format!("need at least {MIN_SAMPLES} samples")));
    }
    if grids.len() < 3 && matches!(c.name, CheckName::LiftTheta | CheckName::Legendrian) {
        return Err(InputError::new(format!("{at}/grids"), "need at least 3 grids for a slope"));
    }
    if c.name == CheckName::Legendrian && grids.len() != sweep.eps.len() {
        return Err(InputError::new(
            format!("{at}/grids"),
            format!("legendrian pairs each grid with a step: {} grids for {} steps", grids.len(), sweep.eps.len()),
        ));
    }
    let names = coordinate_names(n);
    let upsilon = match (&c.upsilon, c.name) {
        (Some(u), _) => {
            if u.len() != n {
                return Err(InputError::new(format!("{at}/upsilon"), format!("expected {n} coefficients, got {}", u.len())));
            }
            let coeffs =
                u.iter().enumerate().map(|(j, s)| parse_in(s, &names, &format!("{at}/upsilon/{j}"))).collect::<Result<Vec<_>, _>>()?;
            Some(Upsilon::new(coeffs).map_err(|e| InputError::new(format!("{at}/upsilon"), e.to_string()))?)
        }
        // x0 dx1∧…∧dx(n−1), a potential for the flat volume form
        (None, CheckName::Dlambda) => {
            let mut coeffs = vec![Expression::constant(0.0); n];
            coeffs[0] = Expression::parse("x0").expect("literal");
            Some(Upsilon::new(coeffs).map_err(|e| InputError::new(format!("{at}/upsilon"), e.to_string()))?)
        }
        (None, _) => None,
    };
    let form = match (&c.form, c.name) {
        (Some(f), _) => {
            let chart = chart_names(n);
            let mut terms = Vec::new();
            for (j, t) in f.terms.iter().enumerate() {
                let coeff = parse_in(&t.coeff, &chart, &format!("{at}/form/terms/{j}/coeff"))?;
                terms.push((t.indices.clone(), coeff));
            }
            Some(ChartForm::new(n, n - 2, terms).map_err(|e| InputError::new(format!("{at}/form"), e.to_string()))?)
        }
        // x0 dx1∧…∧dx(n−2)
        (None, CheckName::Observable) => {
            let idx = (1..n - 1).map(|i| format!("x{i}")).collect();
            Some(
                ChartForm::new(n, n - 2, vec![(idx, Expression::parse("x0").expect("literal"))])
                    .map_err(|e| InputError::new(format!("{at}/form"), e.to_string()))?,
            )
        }
        (None, _) => None,
    };
    let step = c.step.unwrap_or(1e-4);
    if !(step > 0.0 && step < 1.0) {
        return Err(InputError::new(format!("{at}/step"), format!("must lie in (0, 1), got {step}")));
    }
    Ok(ResolvedCheck {
        name: c.name,
        sweep,
        threshold: c.threshold,
        grids,
        upsilon,
        form,
        points: c.points.unwrap_or(20),
        step,
        alpha: c.alpha.unwrap_or(std::f64::consts::PI / 6.0),
    })
}

#[derive(Debug, Clone)]
pub struct FlowSettings {
    pub config: FlowConfig,
    pub grid: ParamDomain,
    pub target_area: Option<f64>,
    pub target_rel_tol: f64,
}

/// A scenario with every expression parsed and every default filled in.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub name: String,
    pub seed: u64,
    pub metric: Arc<MetricSpace>,
    pub domain: ParamDomain,
    pub map: Vec<Expression>,
    pub checks: Vec<ResolvedCheck>,
    pub flow: FlowSettings,
    pub formats: Vec<Format>,
    pub out_dir: Option<String>,
}

impl Resolved {
    pub fn n(&self) -> usize {
        self.metric.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CYL: &str = r#"{
        "metric": {"builtin": "minkowski", "dim": 4},
        "sheet": {
            "params": [{"name": "t", "samples": 12, "range": [0, 1]}, {"name": "s", "samples": 12, "periodic": true}],
            "map": ["t", "cos(s)", "sin(s)", "0"]
        },
        "checks": [{"name": "compatibility"}, {"name": "dlambda"}]
    }"#;

    fn err(src: &str) -> InputError {
        match Scenario::from_json(src).and_then(|s| s.resolve(None)) {
            Err(e) => e,
            Ok(_) => panic!("accepted {src}"),
        }
    }

    #[test]
    fn resolves_defaults() {
        let r = Scenario::from_json(CYL).unwrap().resolve(None).unwrap();
        assert_eq!(r.seed, 42);
        assert_eq!(r.n(), 4);
        assert_eq!(r.checks[0].sweep.trials, 50);
        assert_eq!(r.checks[1].sweep.trials, 3);
        assert!(r.checks[1].upsilon.is_some());
        assert_eq!(r.formats, vec![Format::Csv, Format::Json]);
        let r = Scenario::from_json(CYL).unwrap().resolve(Some("7")).unwrap();
        assert_eq!((r.seed, r.checks[0].sweep.seed), (7, 7));
    }

    #[test]
    fn errors_carry_pointers() {
        assert_eq!(err(&CYL.replace(r#""0"]"#, "]")).pointer, "/sheet/map");
        assert_eq!(err(&CYL.replace("compatibility", "frobnicate")).pointer, "/checks/0/name");
        assert_eq!(err(&CYL.replace("sin(s)", "sin(q)")).pointer, "/sheet/map/2");
        assert_eq!(err(&CYL.replace(r#""samples": 12, "range""#, r#""samples": 4, "range""#)).pointer, "/sheet/params/0/samples");
        let missing = err(r#"{"sheet": {"params": [], "map": []}}"#);
        assert_eq!(missing.pointer, "/metric");
        assert!(missing.message.starts_with("missing field `metric`"));
        assert_eq!(err(&CYL.replace(r#""builtin": "minkowski", "dim": 4"#, r#""dim": 4"#)).pointer, "/metric");
        assert_eq!(err(&CYL.replace(r#""name": "dlambda""#, r#""name": "dlambda", "upsilon": ["x0"]"#)).pointer, "/checks/1/upsilon");
        assert_eq!(err(&CYL.replace(r#""checks""#, r#""extra": 1, "checks""#)).pointer, "/extra");
        let e = Scenario::from_json(CYL).unwrap().resolve(Some("abc")).unwrap_err();
        assert!(e.message.contains("SHEETSPACE_SEED"));
    }
}

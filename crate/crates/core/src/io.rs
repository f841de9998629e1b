//! File formats: CSV tables with a header row and JSON documents.
//!
//! CSV inputs may start with a `# schema_version=1` line. Unknown columns are logged and
//! ignored; missing required columns are errors.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::choice::{ChoiceError, ModeId, NestSpec, NestedLogitModel, UtilityVector};
use crate::estimate::{
    AlternativeAttributes, ChoiceObservation, EstimationResult, ModelSpec, TermSource,
};
use crate::newmode::{NewModeParams, Variant, VotTable};
use crate::purpose::Purpose;
use crate::scenario::{default_grid, Scenario, SweepTable, SyntheticTripConfig, Trip};
use crate::weighting::{MarginTable, RespondentRecord, WeightVector};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{path}: unsupported schema_version {found} (supported: {SCHEMA_VERSION})")]
    Schema { path: PathBuf, found: String },
}

fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn invalid(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Invalid {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Header-indexed CSV rows with 1-based file line numbers.
struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, IoError> {
        let text = read_text(path)?;
        let mut offset = 0u64;
        let mut body = text.as_str();
        if let Some(first) = text.lines().next() {
            if let Some(rest) = first.trim().strip_prefix('#') {
                let rest = rest.trim();
                if let Some(v) = rest.strip_prefix("schema_version") {
                    let v = v.trim_start_matches([' ', '=', ':']).trim();
                    if v != SCHEMA_VERSION.to_string() {
                        return Err(IoError::Schema {
                            path: path.to_path_buf(),
                            found: v.to_string(),
                        });
                    }
                }
                offset = 1;
                body = &text[first.len()..];
                body = body
                    .strip_prefix("\r\n")
                    .or_else(|| body.strip_prefix('\n'))
                    .unwrap_or(body);
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(body.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| parse_err(path, offset + 1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line()) + offset;
                parse_err(path, line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line()) + offset;
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Self {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize, IoError> {
        self.column(name).ok_or_else(|| IoError::MissingColumn {
            path: self.path.clone(),
            column: name.to_string(),
        })
    }

    fn warn_unknown(&self, known: &BTreeSet<usize>) {
        for (i, h) in self.headers.iter().enumerate() {
            if !known.contains(&i) {
                log::warn!("{}: ignoring unknown column `{h}`", self.path.display());
            }
        }
    }

    fn number(&self, line: u64, column: &str, raw: &str) -> Result<f64, IoError> {
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                parse_err(
                    &self.path,
                    line,
                    format!("`{column}`: `{raw}` is not a finite number"),
                )
            })
    }
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Deterministic shortest round-trip formatting for CSV output.
fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, IoError> {
    csv::Writer::from_path(path).map_err(|e| IoError::Write {
        path: path.to_path_buf(),
        source: e.into(),
    })
}

fn write_rows(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), IoError> {
    let wrap = |e: csv::Error| IoError::Write {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(&r).map_err(wrap)?;
    }
    w.flush().map_err(|source| IoError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| invalid(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|source| IoError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D, IoError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line() as u64, e.to_string()))
}

fn check_schema(path: &Path, version: Option<u32>) -> Result<(), IoError> {
    match version {
        Some(v) if v != SCHEMA_VERSION => Err(IoError::Schema {
            path: path.to_path_buf(),
            found: v.to_string(),
        }),
        _ => Ok(()),
    }
}

// ---------------------------------------------------------------------------------------------
// margins.csv / respondents.csv / weights.csv

/// `variable,category,target_share`; variables keep their order of first appearance.
pub fn read_margins(path: &Path) -> Result<MarginTable<f64>, IoError> {
    let t = Table::read(path)?;
    let (v, c, s) = (
        t.require("variable")?,
        t.require("category")?,
        t.require("target_share")?,
    );
    t.warn_unknown(&BTreeSet::from([v, c, s]));
    let mut vars: Vec<(String, Vec<(String, f64)>)> = Vec::new();
    for (line, row) in &t.rows {
        let share = t.number(*line, "target_share", &row[s])?;
        let var = row[v].clone();
        match vars.iter_mut().find(|(name, _)| *name == var) {
            Some((_, cats)) => cats.push((row[c].clone(), share)),
            None => vars.push((var, vec![(row[c].clone(), share)])),
        }
    }
    MarginTable::new(vars).map_err(|e| invalid(path, e.to_string()))
}

/// `respondent_id` plus one column per control variable. Empty cells leave the category unset.
pub fn read_respondents(
    path: &Path,
    variables: &[String],
) -> Result<Vec<RespondentRecord>, IoError> {
    let t = Table::read(path)?;
    let id = t.require("respondent_id")?;
    let mut known = BTreeSet::from([id]);
    let cols: Vec<(String, usize)> = variables
        .iter()
        .map(|v| t.require(v).map(|i| (v.clone(), i)))
        .collect::<Result<_, _>>()?;
    known.extend(cols.iter().map(|(_, i)| *i));
    t.warn_unknown(&known);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, row) in &t.rows {
        if !seen.insert(row[id].clone()) {
            return Err(parse_err(
                path,
                *line,
                format!("duplicate respondent_id `{}`", row[id]),
            ));
        }
        let categories = cols
            .iter()
            .filter(|(_, i)| !row[*i].is_empty())
            .map(|(v, i)| (v.clone(), row[*i].clone()))
            .collect();
        out.push(RespondentRecord {
            id: row[id].clone(),
            categories,
        });
    }
    Ok(out)
}

pub fn write_weights(path: &Path, weights: &WeightVector<f64>) -> Result<(), IoError> {
    write_rows(
        path,
        &["respondent_id", "weight"],
        weights.iter().map(|(id, w)| vec![id.to_string(), num(w)]),
    )
}

pub fn read_weights(path: &Path) -> Result<BTreeMap<String, f64>, IoError> {
    let t = Table::read(path)?;
    let (id, w) = (t.require("respondent_id")?, t.require("weight")?);
    t.warn_unknown(&BTreeSet::from([id, w]));
    let mut out = BTreeMap::new();
    for (line, row) in &t.rows {
        let v = t.number(*line, "weight", &row[w])?;
        if v <= 0.0 {
            return Err(parse_err(path, *line, "weight must be positive"));
        }
        out.insert(row[id].clone(), v);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------------------------
// observations.csv + spec.json

pub fn read_model_spec(path: &Path) -> Result<ModelSpec, IoError> {
    #[derive(Deserialize)]
    struct File {
        schema_version: Option<u32>,
        #[serde(flatten)]
        spec: ModelSpec,
    }
    let f: File = read_json(path)?;
    check_schema(path, f.schema_version)?;
    f.spec
        .validate()
        .map_err(|e| invalid(path, e.to_string()))?;
    Ok(f.spec)
}

#[derive(Debug, Clone)]
pub struct Observations {
    pub records: Vec<ChoiceObservation<f64>>,
    /// Rows dropped for missing sociodemographics.
    pub dropped: usize,
}

/// Wide format: one row per respondent × scenario with `<attribute>_<alternative>` columns,
/// optional `avail_<alternative>` flags and an optional `weight` column. Sociodemographic
/// columns are those the specification references; rows with an empty value there are dropped.
pub fn read_observations(path: &Path, spec: &ModelSpec) -> Result<Observations, IoError> {
    let t = Table::read(path)?;
    let rid = t.require("respondent_id")?;
    let purpose = t.require("purpose")?;
    let scen = t.require("scenario_id")?;
    let chosen = t.require("chosen")?;
    let weight = t.column("weight");
    let mut known = BTreeSet::from([rid, purpose, scen, chosen]);
    known.extend(weight);

    let mut socio_vars: BTreeSet<&str> = BTreeSet::new();
    for term in &spec.terms {
        match &term.source {
            TermSource::Sociodemographic { variable } => {
                socio_vars.insert(variable);
            }
            TermSource::Attribute {
                interact: Some(variable),
                ..
            } => {
                socio_vars.insert(variable);
            }
            _ => {}
        }
    }
    let socio_cols: Vec<(&str, usize)> = socio_vars
        .iter()
        .filter_map(|v| t.column(v).map(|i| (*v, i)))
        .collect();
    known.extend(socio_cols.iter().map(|(_, i)| *i));

    // attribute columns: `<attr>_<alt>` for a modelled alternative (longest alternative wins)
    let mut attr_cols: Vec<(String, String, usize)> = Vec::new();
    let mut avail_cols: BTreeMap<String, usize> = BTreeMap::new();
    for (i, h) in t.headers.iter().enumerate() {
        if known.contains(&i) {
            continue;
        }
        let alt = spec
            .alternatives
            .iter()
            .filter(|a| h.len() > a.len() + 1 && h.ends_with(&format!("_{a}")))
            .max_by_key(|a| a.len());
        if let Some(alt) = alt {
            let attr = &h[..h.len() - alt.len() - 1];
            if attr == "avail" {
                avail_cols.insert(alt.clone(), i);
            } else {
                attr_cols.push((attr.to_string(), alt.clone(), i));
            }
            known.insert(i);
        }
    }
    t.warn_unknown(&known);

    let mut records = Vec::with_capacity(t.rows.len());
    let mut dropped = 0;
    'rows: for (line, row) in &t.rows {
        let p: Purpose = row[purpose]
            .parse()
            .map_err(|e: crate::purpose::UnknownPurpose| parse_err(path, *line, e.to_string()))?;
        let mut sociodemographics = BTreeMap::new();
        for (name, i) in &socio_cols {
            if row[*i].is_empty() {
                dropped += 1;
                continue 'rows;
            }
            sociodemographics.insert(name.to_string(), t.number(*line, name, &row[*i])?);
        }
        let mut alternatives: BTreeMap<String, AlternativeAttributes<f64>> = BTreeMap::new();
        for alt in &spec.alternatives {
            let available = match avail_cols.get(alt) {
                Some(i) => parse_bool(&row[*i]).ok_or_else(|| {
                    parse_err(
                        path,
                        *line,
                        format!("`avail_{alt}`: `{}` is not a boolean", row[*i]),
                    )
                })?,
                None => true,
            };
            alternatives.insert(
                alt.clone(),
                AlternativeAttributes {
                    available,
                    values: BTreeMap::new(),
                },
            );
        }
        for (attr, alt, i) in &attr_cols {
            let entry = alternatives
                .get_mut(alt)
                .expect("alternative inserted above");
            if row[*i].is_empty() {
                if entry.available {
                    return Err(parse_err(
                        path,
                        *line,
                        format!("`{attr}_{alt}` is empty for an available alternative"),
                    ));
                }
                continue;
            }
            entry.values.insert(
                attr.clone(),
                t.number(*line, &format!("{attr}_{alt}"), &row[*i])?,
            );
        }
        let w = match weight {
            Some(i) if !row[i].is_empty() => t.number(*line, "weight", &row[i])?,
            _ => 1.0,
        };
        records.push(ChoiceObservation {
            respondent_id: row[rid].clone(),
            purpose: p,
            scenario_id: row[scen].clone(),
            alternatives,
            sociodemographics,
            chosen: row[chosen].clone(),
            weight: w,
        });
    }
    if dropped > 0 {
        log::warn!(
            "{}: dropped {dropped} rows with missing sociodemographics",
            path.display()
        );
    }
    Ok(Observations { records, dropped })
}

#[derive(Debug, Serialize)]
pub struct EstimationReport<'a> {
    pub schema_version: u32,
    pub purpose: String,
    pub weighted: bool,
    pub dropped_records: usize,
    #[serde(flatten)]
    pub result: &'a EstimationResult<f64>,
}

pub fn write_coefficients(path: &Path, result: &EstimationResult<f64>) -> Result<(), IoError> {
    write_rows(
        path,
        &["coefficient", "estimate", "std_error"],
        result
            .coefficients
            .iter()
            .map(|c| vec![c.name.clone(), num(c.estimate), num(c.std_error)]),
    )
}

/// Coefficient estimates from an estimation report JSON.
pub fn read_report_coefficients(path: &Path) -> Result<BTreeMap<String, f64>, IoError> {
    #[derive(Deserialize)]
    struct Coef {
        name: String,
        estimate: f64,
    }
    #[derive(Deserialize)]
    struct Report {
        schema_version: Option<u32>,
        coefficients: Vec<Coef>,
    }
    let r: Report = read_json(path)?;
    check_schema(path, r.schema_version)?;
    Ok(r.coefficients
        .into_iter()
        .map(|c| (c.name, c.estimate))
        .collect())
}

// ---------------------------------------------------------------------------------------------
// model.json

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema_version: Option<u32>,
    modes: Vec<ModeId>,
    nests: Vec<NestFile>,
    #[serde(default)]
    coefficients: BTreeMap<String, f64>,
    reference_mode: ModeId,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NestFile {
    name: String,
    nc: f64,
    members: Vec<serde_json::Value>,
}

pub fn read_model(path: &Path) -> Result<NestedLogitModel<f64>, IoError> {
    let f: ModelFile = read_json(path)?;
    check_schema(path, f.schema_version)?;
    let mut nests = Vec::with_capacity(f.nests.len());
    for n in f.nests {
        let members = n
            .members
            .into_iter()
            .map(|m| match m {
                serde_json::Value::String(s) => Ok(ModeId::new(s)),
                _ => Err(invalid(
                    path,
                    ChoiceError::NestTooDeep(n.name.clone()).to_string(),
                )),
            })
            .collect::<Result<_, _>>()?;
        nests.push(NestSpec {
            name: n.name,
            nc: n.nc,
            members,
        });
    }
    NestedLogitModel::new(f.modes, nests, f.coefficients, f.reference_mode)
        .map_err(|e| invalid(path, e.to_string()))
}

pub fn model_to_json(model: &NestedLogitModel<f64>) -> serde_json::Value {
    serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "modes": model.modes(),
        "nests": model.nests(),
        "coefficients": model.coefficients(),
        "reference_mode": model.reference_mode(),
    })
}

// ---------------------------------------------------------------------------------------------
// trips.csv

const TRIP_COLUMNS: [&str; 7] = [
    "trip_id",
    "purpose",
    "auto_time_min",
    "distance_km",
    "income_group",
    "in_service_area",
    "metro_gc_min",
];

/// Trip table with a `u_<mode>` utility column per base-model mode; empty means unavailable.
pub fn read_trips(path: &Path, model: &NestedLogitModel<f64>) -> Result<Vec<Trip<f64>>, IoError> {
    let t = Table::read(path)?;
    let idx: Vec<usize> = TRIP_COLUMNS
        .iter()
        .map(|c| t.require(c))
        .collect::<Result<_, _>>()?;
    let mut known: BTreeSet<usize> = idx.iter().copied().collect();
    let ucols: Vec<(ModeId, usize)> = model
        .modes()
        .iter()
        .map(|m| t.require(&format!("u_{m}")).map(|i| (m.clone(), i)))
        .collect::<Result<_, _>>()?;
    known.extend(ucols.iter().map(|(_, i)| *i));
    t.warn_unknown(&known);

    let mut ids = BTreeSet::new();
    let mut trips = Vec::with_capacity(t.rows.len());
    for (line, row) in &t.rows {
        let get = |k: usize| row[idx[k]].as_str();
        if !ids.insert(get(0).to_string()) {
            return Err(parse_err(
                path,
                *line,
                format!("duplicate trip_id `{}`", get(0)),
            ));
        }
        let purpose: Purpose = get(1)
            .parse()
            .map_err(|e: crate::purpose::UnknownPurpose| parse_err(path, *line, e.to_string()))?;
        let in_service_area = parse_bool(get(5)).ok_or_else(|| {
            parse_err(
                path,
                *line,
                format!("in_service_area: `{}` is not a boolean", get(5)),
            )
        })?;
        let mut utilities = UtilityVector::new();
        for (m, i) in &ucols {
            if row[*i].is_empty() {
                utilities.set_unavailable(m.clone());
            } else {
                utilities.set(m.clone(), t.number(*line, &format!("u_{m}"), &row[*i])?);
            }
        }
        let trip = Trip {
            id: get(0).to_string(),
            purpose,
            auto_time_min: t.number(*line, TRIP_COLUMNS[2], get(2))?,
            distance_km: t.number(*line, TRIP_COLUMNS[3], get(3))?,
            income_group: get(4).to_string(),
            in_service_area,
            metro_gc_min: t.number(*line, TRIP_COLUMNS[6], get(6))?,
            utilities,
        };
        trip.validate()
            .map_err(|e| parse_err(path, *line, e.to_string()))?;
        trips.push(trip);
    }
    if trips.is_empty() {
        return Err(invalid(path, "no trips"));
    }
    Ok(trips)
}

pub fn write_trips(
    path: &Path,
    trips: &[Trip<f64>],
    model: &NestedLogitModel<f64>,
) -> Result<(), IoError> {
    let mut header: Vec<String> = TRIP_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(model.modes().iter().map(|m| format!("u_{m}")));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(
        path,
        &header_ref,
        trips.iter().map(|t| {
            let mut r = vec![
                t.id.clone(),
                t.purpose.to_string(),
                num(t.auto_time_min),
                num(t.distance_km),
                t.income_group.clone(),
                t.in_service_area.to_string(),
                num(t.metro_gc_min),
            ];
            r.extend(
                model
                    .modes()
                    .iter()
                    .map(|m| t.utilities.available_value(m).map(num).unwrap_or_default()),
            );
            r
        }),
    )
}

// ---------------------------------------------------------------------------------------------
// sweep outputs

fn levels(s: &Scenario<f64>) -> [String; 3] {
    match s.rh {
        Some(l) => [num(l.tt_factor), num(l.wait_min), num(l.fare_per_km)],
        None => [String::new(), String::new(), String::new()],
    }
}

/// Long format: one row per scenario × purpose × mode.
pub fn write_results(path: &Path, table: &SweepTable<f64>) -> Result<(), IoError> {
    let rows = table.rows.iter().flat_map(|row| {
        let lv = levels(&row.scenario);
        let label = row.scenario.label.clone();
        row.split
            .by_purpose
            .iter()
            .flat_map(move |(purpose, split)| {
                let lv = lv.clone();
                let label = label.clone();
                split.shares.iter().map(move |(mode, share)| {
                    vec![
                        label.clone(),
                        lv[0].clone(),
                        lv[1].clone(),
                        lv[2].clone(),
                        purpose.to_string(),
                        mode.to_string(),
                        num(*share),
                        split.n_trips.to_string(),
                    ]
                })
            })
    });
    write_rows(
        path,
        &[
            "scenario_label",
            "tt_factor",
            "wait_min",
            "fare",
            "purpose",
            "mode",
            "share",
            "n_trips",
        ],
        rows,
    )
}

/// Ride-hailing share per scenario × purpose; `mass_deviation` column when requested.
pub fn write_summary(
    path: &Path,
    table: &SweepTable<f64>,
    with_deviation: bool,
) -> Result<(), IoError> {
    let mut header = vec![
        "scenario_label",
        "tt_factor",
        "wait_min",
        "fare",
        "purpose",
        "rh_share",
        "n_trips",
    ];
    if with_deviation {
        header.push("mass_deviation");
    }
    let rows = table.rows.iter().flat_map(|row| {
        let lv = levels(&row.scenario);
        let label = row.scenario.label.clone();
        row.split.by_purpose.iter().map(move |(purpose, split)| {
            let mut r = vec![
                label.clone(),
                lv[0].clone(),
                lv[1].clone(),
                lv[2].clone(),
                purpose.to_string(),
                num(split
                    .shares
                    .get(&ModeId::ride_hailing())
                    .copied()
                    .unwrap_or(0.0)),
                split.n_trips.to_string(),
            ];
            if with_deviation {
                r.push(num(split.mass_deviation));
            }
            r
        })
    });
    write_rows(path, &header, rows)
}

/// Table shaped as income group × purpose.
pub fn write_vot_table(
    path: &Path,
    table: &BTreeMap<String, BTreeMap<Purpose, f64>>,
) -> Result<(), IoError> {
    let purposes: BTreeSet<Purpose> = table.values().flat_map(|m| m.keys().copied()).collect();
    let mut header = vec!["income_group".to_string()];
    header.extend(purposes.iter().map(|p| p.to_string()));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(
        path,
        &header_ref,
        table.iter().map(|(g, by)| {
            let mut r = vec![g.clone()];
            r.extend(
                purposes
                    .iter()
                    .map(|p| by.get(p).map(|v| num(*v)).unwrap_or_default()),
            );
            r
        }),
    )
}

// ---------------------------------------------------------------------------------------------
// run.json

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewModeConfig {
    pub time_ratio: f64,
    /// Falls back to the model coefficient `beta_gc_metro` when absent.
    #[serde(default)]
    pub beta_gc_metro: Option<f64>,
    /// Fare used outside the grid (e.g. for single-scenario runs), €/km.
    #[serde(default = "default_fare")]
    pub fare_per_km: f64,
}

fn default_fare() -> f64 {
    1.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub label: Option<String>,
    pub tt_factor: f64,
    pub wait_min: f64,
    pub fare_per_km: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// `paper-grid` (16 + baseline) or `base` (the €3.0/km, no-wait preset plus baseline).
    pub preset: Option<String>,
    #[serde(default)]
    pub scenarios: Vec<ScenarioSpec>,
    #[serde(default = "yes")]
    pub include_baseline: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTrips {
    pub count: usize,
    #[serde(default)]
    pub config: Option<SyntheticTripConfig>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationConfig {
    #[default]
    Expected,
    Sampled,
}

/// Run configuration. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: Option<u32>,
    pub model: PathBuf,
    /// Trip table; mutually exclusive with `synthetic_trips`.
    pub trips: Option<PathBuf>,
    pub synthetic_trips: Option<SyntheticTrips>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub new_mode: NewModeConfig,
    pub vot: VotTable<f64>,
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub aggregation: AggregationConfig,
    pub observations: Option<PathBuf>,
    pub margins: Option<PathBuf>,
    pub estimation_spec: Option<PathBuf>,
    pub margin_tolerance: Option<f64>,
}

/// Resolved and validated run: every referenced file has been read and parsed.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub config: RunConfig,
    pub config_path: PathBuf,
    pub base_dir: PathBuf,
    pub model: NestedLogitModel<f64>,
    pub params: NewModeParams<f64>,
    pub trips: Option<Vec<Trip<f64>>>,
    pub grid: Vec<Scenario<f64>>,
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self, IoError> {
        let c: RunConfig = read_json(path)?;
        check_schema(path, c.schema_version)?;
        Ok(c)
    }

    pub fn resolve(&self, base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

pub fn grid_from_preset(name: &str) -> Option<Vec<Scenario<f64>>> {
    match name {
        "paper-grid" => Some(default_grid()),
        "base" => Some(vec![Scenario::baseline(), Scenario::base_preset()]),
        _ => None,
    }
}

/// Reads the config and everything it references, failing before any computation.
pub fn load_run(
    path: &Path,
    preset_override: Option<&str>,
    variant_override: Option<Variant>,
) -> Result<LoadedRun, IoError> {
    let mut config = RunConfig::read(path)?;
    if let Some(v) = variant_override {
        config.variant = v;
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let model = read_model(&config.resolve(&base_dir, &config.model))?;
    if model.reference_mode().as_str() != crate::choice::modes::METRO {
        log::warn!(
            "reference mode is `{}`; ride-hailing is pivoted from it",
            model.reference_mode()
        );
    }

    let beta = match config.new_mode.beta_gc_metro {
        Some(b) => b,
        None => model.coefficient("beta_gc_metro").ok_or_else(|| {
            invalid(
                path,
                "new_mode.beta_gc_metro absent and model has no `beta_gc_metro` coefficient",
            )
        })?,
    };
    let params = NewModeParams {
        time_ratio: config.new_mode.time_ratio,
        fare_per_km: config.new_mode.fare_per_km,
        beta_gc_metro: beta,
        variant: config.variant,
    };
    params
        .validate()
        .map_err(|e| invalid(path, e.to_string()))?;
    config
        .vot
        .validate()
        .map_err(|e| invalid(path, e.to_string()))?;

    let trips = match (&config.trips, &config.synthetic_trips) {
        (Some(_), Some(_)) => {
            return Err(invalid(
                path,
                "give either `trips` or `synthetic_trips`, not both",
            ))
        }
        (Some(p), None) => Some(read_trips(&config.resolve(&base_dir, p), &model)?),
        (None, Some(s)) => {
            if config.seed.is_none() {
                return Err(invalid(path, "synthetic trips need an explicit `seed`"));
            }
            if s.count == 0 {
                return Err(invalid(path, "synthetic_trips.count must be positive"));
            }
            if let Some(c) = &s.config {
                c.validate().map_err(|e| invalid(path, e.to_string()))?;
            }
            None
        }
        (None, None) => {
            return Err(invalid(
                path,
                "no trip source: set `trips` or `synthetic_trips`",
            ))
        }
    };
    if config.aggregation == AggregationConfig::Sampled && config.seed.is_none() {
        return Err(invalid(
            path,
            "sampled aggregation needs an explicit `seed`",
        ));
    }
    for p in [
        &config.observations,
        &config.margins,
        &config.estimation_spec,
    ]
    .into_iter()
    .flatten()
    {
        let full = config.resolve(&base_dir, p);
        if !full.is_file() {
            return Err(IoError::Read {
                path: full,
                source: std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "referenced file does not exist",
                ),
            });
        }
    }

    let grid = build_grid(path, &config, preset_override)?;
    for s in &grid {
        s.validate().map_err(|e| invalid(path, e.to_string()))?;
    }
    if let Some(trips) = &trips {
        for t in trips {
            config
                .vot
                .rh_vot(&t.income_group, t.purpose)
                .map_err(|e| invalid(path, format!("trip `{}`: {e}", t.id)))?;
        }
    }

    Ok(LoadedRun {
        config,
        config_path: path.to_path_buf(),
        base_dir,
        model,
        params,
        trips,
        grid,
    })
}

fn build_grid(
    path: &Path,
    config: &RunConfig,
    preset_override: Option<&str>,
) -> Result<Vec<Scenario<f64>>, IoError> {
    let grid_cfg = config.grid.clone().unwrap_or(GridConfig {
        preset: Some("paper-grid".into()),
        scenarios: Vec::new(),
        include_baseline: true,
    });
    let preset = preset_override
        .map(str::to_string)
        .or(grid_cfg.preset.clone());
    let mut grid = match preset.as_deref() {
        Some(name) => grid_from_preset(name)
            .ok_or_else(|| invalid(path, format!("unknown grid preset `{name}`")))?,
        None => {
            let mut g = Vec::new();
            if grid_cfg.include_baseline {
                g.push(Scenario::baseline());
            }
            g
        }
    };
    if preset_override.is_none() {
        for s in &grid_cfg.scenarios {
            let mut sc = Scenario::with_levels(s.tt_factor, s.wait_min, s.fare_per_km);
            if let Some(l) = &s.label {
                sc.label = l.clone();
            }
            grid.push(sc);
        }
    }
    let mut labels = BTreeSet::new();
    for s in &grid {
        if !labels.insert(s.label.as_str()) {
            return Err(invalid(
                path,
                format!("duplicate scenario label `{}`", s.label),
            ));
        }
    }
    if grid.is_empty() {
        return Err(invalid(path, "scenario grid is empty"));
    }
    Ok(grid)
}

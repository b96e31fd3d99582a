//! Versioned JSON model files.
//!
//! Every file carries `format_version`, `model_kind`, `d`, `p`, `families`
//! and `poisson_total_count`. Matrices are row-major nested arrays. Floats are
//! written in shortest round-trip form, so save followed by load is exact.
//!
//! | kind   | extra fields                                   |
//! |--------|------------------------------------------------|
//! | `rbm`  | `W`, `b`, `c`                                  |
//! | `bm`   | `W`, `b`, `c`, `L`, `J`                        |
//! | `crbm` | `W`, `b`, `c`, `history`, `G`, `Q`             |
//! | `dbn`  | `layers` (one `rbm` object per layer pair)     |
//! | `mlp`  | `mlp_layers`, `code_layer`                     |
//!
//! Any file may add `standardization` with per-column `mean` and `std`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde_json::{json, Map, Value};

use crate::crbm::CrbmParams;
use crate::dbn::{Activation, DbnStack, DenseLayer, Mlp};
use crate::model::{BmParams, Error, RbmParams, Result, UnitFamily};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Rbm(RbmParams),
    Bm(BmParams),
    Crbm(CrbmParams),
    Dbn(DbnStack),
    Mlp(Mlp),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Rbm(_) => "rbm",
            Self::Bm(_) => "bm",
            Self::Crbm(_) => "crbm",
            Self::Dbn(_) => "dbn",
            Self::Mlp(_) => "mlp",
        }
    }

    /// Input dimension.
    pub fn d(&self) -> usize {
        match self {
            Self::Rbm(m) => m.d(),
            Self::Bm(m) => m.base.d(),
            Self::Crbm(m) => m.base.d(),
            Self::Dbn(m) => m.layers[0].d(),
            Self::Mlp(m) => m.input_dim(),
        }
    }

    /// Hidden or code dimension.
    pub fn p(&self) -> usize {
        match self {
            Self::Rbm(m) => m.p(),
            Self::Bm(m) => m.base.p(),
            Self::Crbm(m) => m.base.p(),
            Self::Dbn(m) => m.layers[m.layers.len() - 1].p(),
            Self::Mlp(m) => m.code_dim(),
        }
    }

    pub fn visible_family(&self) -> UnitFamily {
        match self {
            Self::Rbm(m) => m.visible_family,
            Self::Bm(m) => m.base.visible_family,
            Self::Crbm(m) => m.base.visible_family,
            Self::Dbn(m) => m.layers[0].visible_family,
            Self::Mlp(m) => family_of(m.layers[m.layers.len() - 1].activation),
        }
    }

    pub fn hidden_family(&self) -> UnitFamily {
        match self {
            Self::Rbm(m) => m.hidden_family,
            Self::Bm(m) => m.base.hidden_family,
            Self::Crbm(m) => m.base.hidden_family,
            Self::Dbn(m) => m.layers[m.layers.len() - 1].hidden_family,
            Self::Mlp(m) => family_of(m.layers[m.code_layer - 1].activation),
        }
    }

    fn poisson_total_count(&self) -> f64 {
        match self {
            Self::Rbm(m) => m.poisson_total_count,
            Self::Bm(m) => m.base.poisson_total_count,
            Self::Crbm(m) => m.base.poisson_total_count,
            Self::Dbn(m) => m.layers[0].poisson_total_count,
            Self::Mlp(_) => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Rbm(m) => m.validate(),
            Self::Bm(m) => m.validate(),
            Self::Crbm(m) => m.validate(),
            Self::Dbn(m) => m.validate(),
            Self::Mlp(m) => m.validate(),
        }
    }
}

fn family_of(activation: Activation) -> UnitFamily {
    match activation {
        Activation::Sigmoid => UnitFamily::Binary,
        Activation::Identity => UnitFamily::Gaussian,
    }
}

/// Per-column affine map `x -> (x - mean) / std` fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardization {
    /// Columns with zero spread get `std = 1`.
    pub fn fit(rows: ArrayView2<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::Dimension("cannot standardize an empty dataset".into()));
        }
        let mean = rows.mean_axis(ndarray::Axis(0)).expect("non-empty");
        let std = rows.std_axis(ndarray::Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
        Ok(Self { mean, std })
    }

    fn check(&self, cols: usize) -> Result<()> {
        if self.mean.len() != cols || self.std.len() != cols {
            return Err(Error::Dimension(format!(
                "standardization covers {} columns, data has {cols}",
                self.mean.len()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(rows.ncols())?;
        Ok((&rows - &self.mean) / &self.std)
    }

    pub fn invert(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(rows.ncols())?;
        Ok(&rows * &self.std + &self.mean)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: Model,
    pub standardization: Option<Standardization>,
}

impl ModelFile {
    pub fn new(model: Model) -> Self {
        Self { model, standardization: None }
    }

    pub fn to_json(&self) -> Result<Value> {
        self.model.validate()?;
        let mut doc = header(&self.model);
        match &self.model {
            Model::Rbm(m) => insert_rbm(&mut doc, m),
            Model::Bm(m) => {
                insert_rbm(&mut doc, &m.base);
                doc.insert("L".into(), matrix(&m.lateral_visible));
                doc.insert("J".into(), matrix(&m.lateral_hidden));
            }
            Model::Crbm(m) => {
                insert_rbm(&mut doc, &m.base);
                doc.insert("history".into(), json!(m.history_len()));
                doc.insert("G".into(), Value::Array(m.history_visible.iter().map(matrix).collect()));
                doc.insert("Q".into(), Value::Array(m.history_hidden.iter().map(matrix).collect()));
            }
            Model::Dbn(m) => {
                let layers = m.layers.iter().map(|rbm| Value::Object(rbm_document(rbm))).collect();
                doc.insert("layers".into(), Value::Array(layers));
            }
            Model::Mlp(m) => {
                let layers = m
                    .layers
                    .iter()
                    .map(|l| json!({"weights": matrix(&l.weights), "bias": vector(&l.bias), "activation": l.activation.name()}))
                    .collect();
                doc.insert("mlp_layers".into(), Value::Array(layers));
                doc.insert("code_layer".into(), json!(m.code_layer));
            }
        }
        if let Some(s) = &self.standardization {
            doc.insert("standardization".into(), json!({"mean": vector(&s.mean), "std": vector(&s.std)}));
        }
        Ok(Value::Object(doc))
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_json()?).expect("values are finite"))
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let doc = value.as_object().ok_or_else(|| parse_err("<root>", "expected a JSON object"))?;
        let version = get(doc, "format_version")?
            .as_u64()
            .ok_or_else(|| parse_err("format_version", "expected a non-negative integer"))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::Version { found: u32::try_from(version).unwrap_or(u32::MAX), expected: FORMAT_VERSION });
        }
        let kind = string(doc, "model_kind")?;
        let model = match kind {
            "rbm" => Model::Rbm(read_rbm(doc, "")?),
            "bm" => {
                let base = read_rbm(doc, "")?;
                let l = read_matrix(doc, "L")?;
                let j = read_matrix(doc, "J")?;
                Model::Bm(BmParams::new(base, l, j)?)
            }
            "crbm" => {
                let base = read_rbm(doc, "")?;
                let t = usize_field(doc, "history")?;
                let g = read_matrix_list(doc, "G")?;
                let q = read_matrix_list(doc, "Q")?;
                if g.len() != t || q.len() != t {
                    return Err(parse_err("history", &format!("declares {t} lags but G has {} and Q has {}", g.len(), q.len())));
                }
                let params = CrbmParams { base, history_visible: g, history_hidden: q };
                params.validate()?;
                Model::Crbm(params)
            }
            "dbn" => {
                let layers = array(doc, "layers")?
                    .iter()
                    .enumerate()
                    .map(|(l, v)| {
                        let field = format!("layers[{l}]");
                        let obj = v.as_object().ok_or_else(|| parse_err(&field, "expected an object"))?;
                        read_rbm(obj, &format!("{field}."))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Model::Dbn(DbnStack::new(layers)?)
            }
            "mlp" => {
                let layers = array(doc, "mlp_layers")?
                    .iter()
                    .enumerate()
                    .map(|(l, v)| read_dense(v, &format!("mlp_layers[{l}]")))
                    .collect::<Result<Vec<_>>>()?;
                Model::Mlp(Mlp::new(layers, usize_field(doc, "code_layer")?)?)
            }
            other => return Err(parse_err("model_kind", &format!("unknown kind `{other}`"))),
        };
        let d = usize_field(doc, "d")?;
        let p = usize_field(doc, "p")?;
        if (d, p) != (model.d(), model.p()) {
            return Err(parse_err("d", &format!("header says d={d}, p={p} but parameters give d={}, p={}", model.d(), model.p())));
        }
        let standardization = match doc.get("standardization") {
            None | Some(Value::Null) => None,
            Some(v) => {
                let obj = v.as_object().ok_or_else(|| parse_err("standardization", "expected an object"))?;
                let s = Standardization {
                    mean: read_vector(obj, "standardization.mean", "mean")?,
                    std: read_vector(obj, "standardization.std", "std")?,
                };
                s.check(model.d()).map_err(|e| parse_err("standardization", &e.to_string()))?;
                if s.std.iter().any(|&x| x.is_nan() || x <= 0.0) {
                    return Err(parse_err("standardization.std", "entries must be positive"));
                }
                Some(s)
            }
        };
        Ok(Self { model, standardization })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| parse_err("<root>", &e.to_string()))?;
        Self::from_json(&value)
    }
}

pub fn save_model(path: impl AsRef<Path>, file: &ModelFile) -> Result<()> {
    fs::write(path, file.to_json_string()? + "\n")?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    ModelFile::from_json_str(&fs::read_to_string(path)?)
}

fn header(model: &Model) -> Map<String, Value> {
    let mut doc = Map::new();
    doc.insert("format_version".into(), json!(FORMAT_VERSION));
    doc.insert("model_kind".into(), json!(model.kind()));
    doc.insert("d".into(), json!(model.d()));
    doc.insert("p".into(), json!(model.p()));
    doc.insert(
        "families".into(),
        json!({"visible": model.visible_family().name(), "hidden": model.hidden_family().name()}),
    );
    doc.insert("poisson_total_count".into(), json!(model.poisson_total_count()));
    doc
}

fn rbm_document(rbm: &RbmParams) -> Map<String, Value> {
    let mut doc = Map::new();
    doc.insert("d".into(), json!(rbm.d()));
    doc.insert("p".into(), json!(rbm.p()));
    doc.insert("families".into(), json!({"visible": rbm.visible_family.name(), "hidden": rbm.hidden_family.name()}));
    doc.insert("poisson_total_count".into(), json!(rbm.poisson_total_count));
    insert_rbm(&mut doc, rbm);
    doc
}

fn insert_rbm(doc: &mut Map<String, Value>, rbm: &RbmParams) {
    doc.insert("W".into(), matrix(&rbm.weights));
    doc.insert("b".into(), vector(&rbm.visible_bias));
    doc.insert("c".into(), vector(&rbm.hidden_bias));
}

fn matrix(m: &Array2<f64>) -> Value {
    Value::Array(m.rows().into_iter().map(|r| r.iter().map(|&x| json!(x)).collect()).collect())
}

fn vector(v: &Array1<f64>) -> Value {
    v.iter().map(|&x| json!(x)).collect()
}

fn parse_err(field: &str, message: &str) -> Error {
    Error::Parse { field: field.to_string(), message: message.to_string() }
}

fn get<'a>(doc: &'a Map<String, Value>, field: &str) -> Result<&'a Value> {
    doc.get(field).ok_or_else(|| parse_err(field, "missing"))
}

fn string<'a>(doc: &'a Map<String, Value>, field: &str) -> Result<&'a str> {
    get(doc, field)?.as_str().ok_or_else(|| parse_err(field, "expected a string"))
}

fn array<'a>(doc: &'a Map<String, Value>, field: &str) -> Result<&'a Vec<Value>> {
    get(doc, field)?.as_array().ok_or_else(|| parse_err(field, "expected an array"))
}

fn usize_field(doc: &Map<String, Value>, field: &str) -> Result<usize> {
    get(doc, field)?
        .as_u64()
        .and_then(|x| usize::try_from(x).ok())
        .ok_or_else(|| parse_err(field, "expected a non-negative integer"))
}

fn number(v: &Value, field: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| parse_err(field, &format!("expected a number, found {v}")))
}

fn vector_from(v: &Value, field: &str) -> Result<Array1<f64>> {
    let items = v.as_array().ok_or_else(|| parse_err(field, "expected an array of numbers"))?;
    items.iter().map(|x| number(x, field)).collect::<Result<Vec<_>>>().map(Array1::from)
}

fn read_vector(doc: &Map<String, Value>, field: &str, key: &str) -> Result<Array1<f64>> {
    vector_from(doc.get(key).ok_or_else(|| parse_err(field, "missing"))?, field)
}

fn matrix_from(v: &Value, field: &str) -> Result<Array2<f64>> {
    let rows = v.as_array().ok_or_else(|| parse_err(field, "expected an array of rows"))?;
    let rows = rows.iter().map(|r| vector_from(r, field)).collect::<Result<Vec<_>>>()?;
    let cols = rows.first().map_or(0, Array1::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(parse_err(field, "rows differ in length"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| parse_err(field, &e.to_string()))
}

fn read_matrix(doc: &Map<String, Value>, field: &str) -> Result<Array2<f64>> {
    matrix_from(get(doc, field)?, field)
}

fn read_matrix_list(doc: &Map<String, Value>, field: &str) -> Result<Vec<Array2<f64>>> {
    array(doc, field)?.iter().enumerate().map(|(i, m)| matrix_from(m, &format!("{field}[{i}]"))).collect()
}

fn family(v: &Value, field: &str) -> Result<UnitFamily> {
    let name = v.as_str().ok_or_else(|| parse_err(field, "expected a string"))?;
    name.parse().map_err(|_| parse_err(field, &format!("unknown unit family `{name}`")))
}

/// Reads `W`, `b`, `c`, `families` and `poisson_total_count`; `prefix` names
/// the enclosing object in error messages.
fn read_rbm(doc: &Map<String, Value>, prefix: &str) -> Result<RbmParams> {
    let name = |f: &str| format!("{prefix}{f}");
    let field = |f: &str| doc.get(f).ok_or_else(|| parse_err(&name(f), "missing"));
    let families = field("families")?.as_object().ok_or_else(|| parse_err(&name("families"), "expected an object"))?;
    let fam = |f: &str| {
        let full = name(&format!("families.{f}"));
        family(families.get(f).ok_or_else(|| parse_err(&full, "missing"))?, &full)
    };
    let weights = matrix_from(field("W")?, &name("W"))?;
    let visible_bias = vector_from(field("b")?, &name("b"))?;
    let hidden_bias = vector_from(field("c")?, &name("c"))?;
    let total = number(field("poisson_total_count")?, &name("poisson_total_count"))?;
    let params = RbmParams {
        weights,
        visible_bias,
        hidden_bias,
        visible_family: fam("visible")?,
        hidden_family: fam("hidden")?,
        poisson_total_count: total,
    };
    params.validate()?;
    for (key, expected) in [("d", params.d()), ("p", params.p())] {
        if let Some(v) = doc.get(key) {
            if v.as_u64() != Some(expected as u64) {
                return Err(parse_err(&name(key), &format!("declared {v}, parameters give {expected}")));
            }
        }
    }
    Ok(params)
}

fn read_dense(v: &Value, field: &str) -> Result<DenseLayer> {
    let obj = v.as_object().ok_or_else(|| parse_err(field, "expected an object"))?;
    let sub = |f: &str| format!("{field}.{f}");
    let weights = matrix_from(obj.get("weights").ok_or_else(|| parse_err(&sub("weights"), "missing"))?, &sub("weights"))?;
    let bias = read_vector(obj, &sub("bias"), "bias")?;
    let activation = match obj.get("activation").and_then(Value::as_str) {
        Some("sigmoid") => Activation::Sigmoid,
        Some("identity") => Activation::Identity,
        Some(other) => return Err(parse_err(&sub("activation"), &format!("unknown activation `{other}`"))),
        None => return Err(parse_err(&sub("activation"), "missing or not a string")),
    };
    Ok(DenseLayer { weights, bias, activation })
}

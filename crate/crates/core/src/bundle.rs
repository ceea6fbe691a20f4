//! Versioned JSON model bundle.
//!
//! Floats are written with 17 significant digits so every `f64` survives a
//! save/load cycle exactly and a re-save is byte-identical.

use std::io::{self, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::adapt::{transform, AffineMap};
use crate::config::RunConfig;
use crate::data::{Dataset, Scaler};
use crate::error::{Error, Result};
use crate::regress::{predict, RidgeModel};

pub const FORMAT_VERSION: u32 = 1;

/// Summary of the mined latent domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    /// Domain of every training row, 1-based.
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
    /// Regression coefficients of each domain, intercept first.
    pub atoms: Vec<Vec<f64>>,
    /// Final noise variance and concentration of the sampler; absent when
    /// mining was skipped.
    pub sigma: Option<f64>,
    pub nu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub response_name: String,
    pub scaler: Scaler,
    pub partition: PartitionSummary,
    pub map: AffineMap,
    pub ridge: RidgeModel,
    pub config: RunConfig,
}

/// Predictions in standardized and original response units.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub z: DVector<f64>,
    pub raw: DVector<f64>,
}

impl ModelBundle {
    pub fn p(&self) -> usize {
        self.feature_names.len()
    }

    /// Maps standardized features (`n × p`, target semantics so `ŷ = 0`) to
    /// the `n × q` transferred representation.
    pub fn project_standardized(&self, x_std: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_std.ncols() != self.p() {
            return Err(Error::Dimension(format!(
                "bundle expects {} features, got {}",
                self.p(),
                x_std.ncols()
            )));
        }
        let cols = x_std.transpose().insert_row(self.p(), 0.0);
        Ok(transform(&self.map, &cols)?.transpose())
    }

    /// Predictions for standardized features.
    pub fn predict_standardized(&self, x_std: &DMatrix<f64>) -> Result<DVector<f64>> {
        predict(&self.ridge, &self.project_standardized(x_std)?)
    }

    /// Predictions for a dataset in original units. Columns are matched by
    /// name.
    pub fn predict(&self, data: &Dataset) -> Result<Predictions> {
        if data.names != self.feature_names {
            return Err(Error::Dimension(format!(
                "feature columns {:?} do not match the bundle's {:?}",
                data.names, self.feature_names
            )));
        }
        let x_std = self.scaler.standardize_features(&data.features)?;
        let z = self.predict_standardized(&x_std)?;
        let raw = self.scaler.unstandardize_response(&z)?;
        Ok(Predictions { z, raw })
    }

    fn validate(&self) -> Result<()> {
        let p = self.p();
        let bad = |msg: String| Err(Error::Bundle(msg));
        if self.scaler.means.len() != p || self.scaler.stds.len() != p {
            return bad(format!("scaler covers {} features, expected {p}", self.scaler.means.len()));
        }
        if self.map.b.nrows() != p + 1 || self.map.b.ncols() != self.map.q {
            return bad(format!(
                "map is {}x{}, expected {}x{}",
                self.map.b.nrows(),
                self.map.b.ncols(),
                p + 1,
                self.map.q
            ));
        }
        if self.ridge.weights.len() != self.map.q {
            return bad(format!(
                "ridge has {} weights for a {}-dimensional map",
                self.ridge.weights.len(),
                self.map.q
            ));
        }
        let part = &self.partition;
        if part.sizes.len() != part.atoms.len() {
            return bad("partition sizes and atoms differ in length".into());
        }
        if part.labels.iter().any(|&l| l == 0 || l > part.sizes.len()) {
            return bad("partition labels must lie in 1..=m".into());
        }
        Ok(())
    }

    /// Serialized bytes, as written by [`save_bundle`].
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigits::default());
        self.serialize(&mut ser)
            .map_err(|e| Error::Bundle(format!("serialization failed: {e}")))?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Bundle(format!("not valid JSON: {e}")))?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::Bundle(format!(
                    "unsupported format_version {v} (this build reads {FORMAT_VERSION})"
                )))
            }
            None => return Err(Error::Bundle("missing or invalid format_version".into())),
        }
        let mut de = serde_json::Deserializer::from_str(text);
        let bundle: ModelBundle = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| Error::Bundle(format!("invalid field `{}`: {}", e.path(), e.inner())))?;
        bundle.validate()?;
        Ok(bundle)
    }
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = bundle.to_bytes()?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelBundle::from_json(&text)
}

/// Pretty JSON with floats in `d.dddddddddddddddde±x` form.
#[derive(Default)]
struct SigDigits {
    pretty: PrettyFormatter<'static>,
}

impl Formatter for SigDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        write!(w, "{:.16e}", f64::from(value))
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_object_value(w)
    }
}

//! JSON plant and controller files.
//!
//! Matrices are row-major nested arrays. A plant file looks like
//!
//! ```json
//! {
//!   "n": 1,
//!   "state_delays": [1.0],
//!   "input_delay": 0.0,
//!   "feedthrough_delay": 0.0,
//!   "A": [[[-1.0]], [[-0.5]]],
//!   "B1": [[1.0]], "B2": [[1.0]],
//!   "C1": [[1.0]], "C2": [[1.0]],
//!   "D11": [[0.0]], "D12": [[1.0]], "D21": [[1.0]], "D22": [[0.0]]
//! }
//! ```
//!
//! and a controller file holds `nK`, `AK`, `BK`, `CK`. The optional keys
//! `nw`, `nu`, `nz`, `ny` only matter when a matrix has no rows.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::RMat;
use crate::model::{ControllerRealization, TimeDelayPlant};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantFile {
    pub n: usize,
    pub state_delays: Vec<f64>,
    pub input_delay: f64,
    pub feedthrough_delay: f64,
    #[serde(rename = "A")]
    pub a: Vec<Rows>,
    #[serde(rename = "B1")]
    pub b1: Rows,
    #[serde(rename = "B2")]
    pub b2: Rows,
    #[serde(rename = "C1")]
    pub c1: Rows,
    #[serde(rename = "C2")]
    pub c2: Rows,
    #[serde(rename = "D11")]
    pub d11: Rows,
    #[serde(rename = "D12")]
    pub d12: Rows,
    #[serde(rename = "D21")]
    pub d21: Rows,
    #[serde(rename = "D22")]
    pub d22: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nw: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nz: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ny: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerFile {
    #[serde(rename = "nK")]
    pub nk: usize,
    #[serde(rename = "AK")]
    pub ak: Rows,
    #[serde(rename = "BK")]
    pub bk: Rows,
    #[serde(rename = "CK")]
    pub ck: Rows,
}

/// Builds a matrix from rows; `cols_if_empty` shapes a matrix with no rows.
fn matrix(field: &str, rows: &Rows, cols_if_empty: usize) -> Result<RMat> {
    if rows.is_empty() {
        return Ok(RMat::zeros(0, cols_if_empty));
    }
    let cols = rows[0].len();
    if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(Error::Parse(format!(
            "field `{field}`: row {i} has {} entries, row 0 has {cols}",
            rows[i].len()
        )));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Parse(format!("field `{field}`: non-finite entry")));
    }
    Ok(RMat::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

fn rows_of(m: &RMat) -> Rows {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn width(rows: &Rows) -> Option<usize> {
    rows.first().map(|r| r.len())
}

impl PlantFile {
    pub fn into_plant(self) -> Result<TimeDelayPlant> {
        let n = self.n;
        let nw = self.nw.or(width(&self.b1)).or(width(&self.d11)).unwrap_or(0);
        let nu = self.nu.or(width(&self.b2)).or(width(&self.d12)).unwrap_or(0);
        let nz = self.nz.unwrap_or(self.c1.len());
        let ny = self.ny.unwrap_or(self.c2.len());
        let _ = (nz, ny);
        if self.a.is_empty() {
            return Err(Error::Parse("field `A`: at least A0 is required".into()));
        }
        let a = self
            .a
            .iter()
            .enumerate()
            .map(|(i, rows)| matrix(&format!("A[{i}]"), rows, n))
            .collect::<Result<Vec<_>>>()?;
        if a[0].nrows() != n {
            return Err(Error::Parse(format!("field `n` is {n} but A[0] has {} rows", a[0].nrows())));
        }
        let plant = TimeDelayPlant {
            state_delays: self.state_delays,
            input_delay: self.input_delay,
            feedthrough_delay: self.feedthrough_delay,
            a,
            b1: matrix("B1", &self.b1, nw)?,
            b2: matrix("B2", &self.b2, nu)?,
            c1: matrix("C1", &self.c1, n)?,
            c2: matrix("C2", &self.c2, n)?,
            d11: matrix("D11", &self.d11, nw)?,
            d12: matrix("D12", &self.d12, nu)?,
            d21: matrix("D21", &self.d21, nw)?,
            d22: matrix("D22", &self.d22, nu)?,
        };
        plant.validate().map_err(|e| Error::Parse(format!("invalid plant: {e}")))?;
        Ok(plant)
    }

    pub fn from_plant(p: &TimeDelayPlant) -> Self {
        Self {
            n: p.n(),
            state_delays: p.state_delays.clone(),
            input_delay: p.input_delay,
            feedthrough_delay: p.feedthrough_delay,
            a: p.a.iter().map(rows_of).collect(),
            b1: rows_of(&p.b1),
            b2: rows_of(&p.b2),
            c1: rows_of(&p.c1),
            c2: rows_of(&p.c2),
            d11: rows_of(&p.d11),
            d12: rows_of(&p.d12),
            d21: rows_of(&p.d21),
            d22: rows_of(&p.d22),
            nw: Some(p.nw()),
            nu: Some(p.nu()),
            nz: Some(p.nz()),
            ny: Some(p.ny()),
        }
    }
}

impl ControllerFile {
    pub fn into_controller(self, plant: &TimeDelayPlant) -> Result<ControllerRealization> {
        let nk = self.nk;
        let ak = matrix("AK", &self.ak, nk)?;
        let bk = matrix("BK", &self.bk, plant.ny())?;
        let ck = if self.ck.is_empty() {
            RMat::zeros(0, nk)
        } else {
            matrix("CK", &self.ck, nk)?
        };
        let ak = if nk == 0 { RMat::zeros(0, 0) } else { ak };
        let bk = if nk == 0 { RMat::zeros(0, plant.ny()) } else { bk };
        let ck = if nk == 0 { RMat::zeros(plant.nu(), 0) } else { ck };
        if ak.nrows() != nk {
            return Err(Error::Parse(format!("field `nK` is {nk} but AK has {} rows", ak.nrows())));
        }
        let k = ControllerRealization::new(ak, bk, ck).map_err(|e| Error::Parse(format!("invalid controller: {e}")))?;
        k.check_against(plant)
            .map_err(|e| Error::Parse(format!("controller does not fit plant: {e}")))?;
        Ok(k)
    }

    pub fn from_controller(k: &ControllerRealization) -> Self {
        Self { nk: k.nk(), ak: rows_of(&k.ak), bk: rows_of(&k.bk), ck: rows_of(&k.ck) }
    }
}

pub fn parse_plant(text: &str) -> Result<TimeDelayPlant> {
    let file: PlantFile = serde_json::from_str(text).map_err(|e| Error::Parse(format!("plant file: {e}")))?;
    file.into_plant()
}

pub fn parse_controller(text: &str, plant: &TimeDelayPlant) -> Result<ControllerRealization> {
    let file: ControllerFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("controller file: {e}")))?;
    file.into_controller(plant)
}

pub fn read_plant(path: impl AsRef<Path>) -> Result<TimeDelayPlant> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_plant(&text)
}

pub fn read_controller(path: impl AsRef<Path>, plant: &TimeDelayPlant) -> Result<ControllerRealization> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_controller(&text, plant)
}

pub fn controller_to_json(k: &ControllerRealization) -> String {
    serde_json::to_string_pretty(&ControllerFile::from_controller(k)).expect("controller serializes") + "\n"
}

pub fn plant_to_json(p: &TimeDelayPlant) -> String {
    serde_json::to_string_pretty(&PlantFile::from_plant(p)).expect("plant serializes") + "\n"
}

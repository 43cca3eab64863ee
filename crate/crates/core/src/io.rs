//! File formats: network JSON, plain-text `.mat` matrices and serde helpers
//! that write matrices as row-major nested arrays.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DkfError, Result};
use crate::network::{build_network, NetworkModel, SubsystemId, SubsystemModel};
use crate::riccati::Mat;

/// Nested row-major arrays. Every row must have the same length; `[]` is a
/// `0 × 0` matrix and `[[]]`-style rows of length zero give `r × 0`.
pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(DkfError::Parse("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter()
        .map(|row| row.iter().copied().collect())
        .collect()
}

/// `#[serde(with = "crate::io::rows")]` for `Mat` fields.
pub mod rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
        mat_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        mat_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// `#[serde(with = "crate::io::row_map")]` for `BTreeMap<SubsystemId, Mat>`.
pub mod row_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        m: &BTreeMap<SubsystemId, Mat>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        m.iter()
            .map(|(k, v)| (k.to_string(), mat_to_rows(v)))
            .collect::<BTreeMap<_, _>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<SubsystemId, Mat>, D::Error> {
        let raw = BTreeMap::<String, Vec<Vec<f64>>>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                let id = k
                    .parse::<SubsystemId>()
                    .map_err(|_| serde::de::Error::custom(format!("invalid subsystem id {k:?}")))?;
                let m = mat_from_rows(&v).map_err(serde::de::Error::custom)?;
                Ok((id, m))
            })
            .collect()
    }
}

/// One subsystem as it appears in the network JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsystemSpec {
    pub id: SubsystemId,
    #[serde(rename = "A_ii", with = "rows")]
    pub a_ii: Mat,
    #[serde(rename = "C", with = "rows")]
    pub c: Mat,
    #[serde(rename = "Q", with = "rows")]
    pub q: Mat,
    #[serde(rename = "R", with = "rows")]
    pub r: Mat,
    #[serde(default, with = "row_map")]
    pub coupling: BTreeMap<SubsystemId, Mat>,
}

impl From<&SubsystemModel> for SubsystemSpec {
    fn from(s: &SubsystemModel) -> Self {
        Self {
            id: s.id,
            a_ii: s.a_ii.clone(),
            c: s.c.clone(),
            q: s.q.clone(),
            r: s.r.clone(),
            coupling: s.coupling.clone(),
        }
    }
}

impl From<SubsystemSpec> for SubsystemModel {
    fn from(s: SubsystemSpec) -> Self {
        SubsystemModel {
            id: s.id,
            a_ii: s.a_ii,
            coupling: s.coupling,
            c: s.c,
            q: s.q,
            r: s.r,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub subsystems: Vec<SubsystemSpec>,
}

impl NetworkSpec {
    pub fn build(self) -> Result<NetworkModel> {
        build_network(self.subsystems.into_iter().map(Into::into).collect())
    }
}

impl From<&NetworkModel> for NetworkSpec {
    fn from(n: &NetworkModel) -> Self {
        Self {
            subsystems: n.subsystems().map(Into::into).collect(),
        }
    }
}

pub fn network_from_json(text: &str) -> Result<NetworkModel> {
    serde_json::from_str::<NetworkSpec>(text)?.build()
}

pub fn network_to_json(network: &NetworkModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(&NetworkSpec::from(network))?)
}

pub fn read_network(path: &Path) -> Result<NetworkModel> {
    network_from_json(&fs::read_to_string(path)?)
}

/// `.mat` text: `rows cols` on the first line, then row-major entries.
pub fn format_mat(m: &Mat) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn parse_mat(text: &str) -> Result<Mat> {
    let mut tokens = text.split_whitespace();
    let mut dim = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| DkfError::Parse(format!("missing {what} count")))?
            .parse()
            .map_err(|_| DkfError::Parse(format!("invalid {what} count")))
    };
    let (r, c) = (dim("row")?, dim("column")?);
    let values: Vec<f64> = tokens
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| DkfError::Parse(format!("invalid entry {t:?}")))
        })
        .collect::<Result<_>>()?;
    if values.len() != r * c {
        return Err(DkfError::Parse(format!(
            "expected {} entries for a {r}x{c} matrix, found {}",
            r * c,
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DkfError::Parse("non-finite matrix entry".into()));
    }
    Ok(Mat::from_row_slice(r, c, &values))
}

pub fn write_mat(path: &Path, m: &Mat) -> Result<()> {
    fs::write(path, format_mat(m))?;
    Ok(())
}

pub fn read_mat(path: &Path) -> Result<Mat> {
    parse_mat(&fs::read_to_string(path)?)
}

/// File name used for the covariance bound of subsystem `id`.
pub fn pbar_file_name(id: SubsystemId) -> String {
    format!("Pbar_{id}.mat")
}

/// Loads `Pbar_<id>.mat` for every subsystem of the network.
pub fn read_pbar_dir(dir: &Path, network: &NetworkModel) -> Result<BTreeMap<SubsystemId, Mat>> {
    network
        .ids()
        .into_iter()
        .map(|id| Ok((id, read_mat(&dir.join(pbar_file_name(id)))?)))
        .collect()
}

pub fn write_pbar_dir(dir: &Path, pbars: &BTreeMap<SubsystemId, Mat>) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (id, p) in pbars {
        write_mat(&dir.join(pbar_file_name(*id)), p)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mat_text_roundtrip_is_exact() {
        let m = Mat::from_row_slice(
            2,
            3,
            &[1.0 / 3.0, -2.5e-12, 7.0, 1e300, -0.0, std::f64::consts::PI],
        );
        let back = parse_mat(&format_mat(&m)).unwrap();
        assert_eq!(back, m);
        assert!(format_mat(&m).starts_with("2 3\n"));
    }

    #[test]
    fn mat_parse_errors() {
        assert!(parse_mat("2 2\n1 2 3").is_err());
        assert!(parse_mat("x 2").is_err());
        assert!(parse_mat("1 1\nfoo").is_err());
        assert!(parse_mat("1 1\nNaN").is_err());
        assert_eq!(parse_mat("0 0\n").unwrap().shape(), (0, 0));
    }

    #[test]
    fn network_json_roundtrip() {
        let text = r#"{
            "subsystems": [
                {"id": 1, "A_ii": [[0.9, 0.1], [0.1, -0.9]], "C": [[1, 1]], "Q": [[1, 0], [0, 1]], "R": [[1]],
                 "coupling": {"2": [[0.1, 0], [0, -0.1]]}},
                {"id": 2, "A_ii": [[0.9, 0.1], [0.1, -0.9]], "C": [[1, 1]], "Q": [[1, 0], [0, 1]], "R": [[1]]}
            ]
        }"#;
        let net = network_from_json(text).unwrap();
        assert_eq!(net.neighbors(1).unwrap(), &[1, 2]);
        assert_eq!(net.successors(2).unwrap(), &[1, 2]);
        let again = network_from_json(&network_to_json(&net).unwrap()).unwrap();
        assert_eq!(again.to_models(), net.to_models());
    }

    #[test]
    fn network_json_errors() {
        assert!(matches!(network_from_json("{"), Err(DkfError::Json(_))));
        let ragged = r#"{"subsystems": [{"id": 0, "A_ii": [[1, 2], [3]], "C": [[1]], "Q": [[1]], "R": [[1]]}]}"#;
        assert!(network_from_json(ragged).is_err());
        let bad_key = r#"{"subsystems": [{"id": 0, "A_ii": [[1]], "C": [[1]], "Q": [[1]], "R": [[1]], "coupling": {"x": [[1]]}}]}"#;
        assert!(network_from_json(bad_key).is_err());
    }

    #[test]
    fn pbar_directory_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let pbars: BTreeMap<_, _> = [
            (1, Mat::identity(2, 2) * 1.5),
            (4, Mat::from_element(1, 1, 0.25)),
        ]
        .into();
        write_pbar_dir(dir.path(), &pbars).unwrap();
        assert!(dir.path().join("Pbar_4.mat").exists());
        assert_eq!(read_mat(&dir.path().join("Pbar_1.mat")).unwrap(), pbars[&1]);
    }
}

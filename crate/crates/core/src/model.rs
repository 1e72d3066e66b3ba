//! Model files: a rates measure or a bootstrap update family, in TOML.
//!
//! ```toml
//! dimension = 1
//! range = 1
//! memoryless = true
//!
//! [[atoms]]
//! weight = "1/2"
//! minimal_sets = [[[-1, -1]], [[1, -1]]]
//!
//! [[atoms]]
//! weight = "0.5"
//! minimal_sets = []
//! ```
//!
//! or, for bootstrap percolation on `Z^dimension`,
//!
//! ```toml
//! dimension = 2
//! update_family = [[[-1, -1], [1, -1]]]
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::bp::UpdateFamily;
use crate::error::{Error, Result};
use crate::exact::{parse_q, qi, Q};
use crate::rates::RatesMeasure;
use crate::upset::{upfamily_from_sites, Neighborhood};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    dimension: usize,
    range: Option<i64>,
    memoryless: Option<bool>,
    atoms: Option<Vec<RawAtom>>,
    update_family: Option<Vec<Vec<Vec<i64>>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAtom {
    weight: Weight,
    minimal_sets: Vec<Vec<Vec<i64>>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Weight {
    Int(i64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Measure(RatesMeasure),
    Bootstrap(UpdateFamily),
}

impl Model {
    pub fn parse(text: &str) -> Result<Model> {
        let raw: RawModel = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        match (raw.atoms, raw.update_family) {
            (Some(atoms), None) => {
                let nb = Neighborhood::new(
                    raw.dimension,
                    raw.range.ok_or_else(|| Error::Parse("missing range".into()))?,
                    raw.memoryless.unwrap_or(false),
                )?;
                let atoms = atoms
                    .into_iter()
                    .map(|a| {
                        let w: Q = match a.weight {
                            Weight::Int(n) => qi(n),
                            Weight::Text(s) => parse_q(&s)?,
                        };
                        Ok((upfamily_from_sites(nb, &a.minimal_sets)?, w))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Model::Measure(RatesMeasure::new(nb, atoms)?))
            }
            (None, Some(sets)) => {
                if raw.range.is_some() || raw.memoryless.is_some() {
                    return Err(Error::Parse("range and memoryless apply to measures only".into()));
                }
                Ok(Model::Bootstrap(UpdateFamily::new(raw.dimension, sets)?))
            }
            _ => Err(Error::Parse("exactly one of atoms and update_family is required".into())),
        }
    }

    pub fn load(path: &Path) -> Result<Model> {
        Model::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{q, Prob};
    use crate::rates::osp;

    #[test]
    fn osp_file() {
        let m = Model::parse(
            r#"
dimension = 1
range = 1
memoryless = true
[[atoms]]
weight = "1/2"
minimal_sets = [[[-1, -1]], [[1, -1]]]
[[atoms]]
weight = "0.5"
minimal_sets = []
"#,
        )
        .unwrap();
        assert_eq!(m, Model::Measure(osp(&Prob::new(q(1, 2)).unwrap())));
    }

    #[test]
    fn integer_weight_and_bootstrap() {
        let m = Model::parse("dimension = 1\nrange = 2\n[[atoms]]\nweight = 1\nminimal_sets = [[]]\n").unwrap();
        match m {
            Model::Measure(mu) => assert!(mu.atoms()[0].0.is_omega()),
            _ => panic!(),
        }
        let b = Model::parse("dimension = 2\nupdate_family = [[[-1, -1], [1, -1]]]\n").unwrap();
        assert_eq!(b, Model::Bootstrap(UpdateFamily::new(2, vec![vec![vec![-1, -1], vec![1, -1]]]).unwrap()));
    }

    #[test]
    fn rejects() {
        for bad in [
            "dimension = 1\nrange = 1\n",
            "dimension = 1\nrange = 1\nupdate_family = []\n[[atoms]]\nweight = 1\nminimal_sets = [[]]\n",
            "dimension = 1\nrange = 1\n[[atoms]]\nweight = \"1/3\"\nminimal_sets = [[]]\n",
            "dimension = 1\nrange = 1\n[[atoms]]\nweight = 1\nminimal_sets = [[[0, 0]]]\n",
            "dimension = 2\nupdate_family = [[[0, 0]]]\n",
            "dimension = 2\nupdate_family = [[[1]]]\n",
            "dimension = 1\nrange = 1\ncolor = 3\n[[atoms]]\nweight = 1\nminimal_sets = [[]]\n",
        ] {
            assert!(Model::parse(bad).is_err(), "{bad}");
        }
    }
}

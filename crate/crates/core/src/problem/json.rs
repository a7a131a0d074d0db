//! `netopt-problem-v1` JSON container for problems and (optionally) a graph.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::set::SetDoc;
use super::{FeasibleSet, Problem, ProblemCcdc, ProblemDccc, ProblemDcx, QuadCost, RowBlock};
use crate::error::{Error, Result};
use crate::linalg::{from_rows, to_rows, Mat, Vector};

pub const SCHEMA: &str = "netopt-problem-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub nodes: usize,
    /// Directed pairs `[i, j]`: node `j` sends to node `i` (0-based).
    pub edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CostDoc {
    h: Vec<Vec<f64>>,
    q: Vec<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    offset: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RowBlockDoc {
    owner: usize,
    rows: Vec<usize>,
    neighbors: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlockDoc {
    i: usize,
    j: usize,
    h: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "lowercase")]
enum ProblemDoc {
    Dcx {
        costs: Vec<CostDoc>,
        set: SetDoc,
        strict: bool,
    },
    Dccc {
        costs: Vec<CostDoc>,
        sets: Vec<SetDoc>,
        coupling: Vec<Vec<Vec<f64>>>,
        rhs: Vec<f64>,
        row_blocks: Vec<RowBlockDoc>,
    },
    Ccdc {
        /// Upper-triangular nonzero blocks (`i <= j`); the lower half is implied.
        blocks: Vec<BlockDoc>,
        linear: Vec<Vec<f64>>,
        sets: Vec<SetDoc>,
        #[serde(default, skip_serializing_if = "is_zero")]
        offset: f64,
    },
}

/// Top-level JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemDocument {
    pub schema: String,
    problem: ProblemDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphDoc>,
    /// Free-form generator metadata (seed, dimensions, ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

fn mat(rows: &[Vec<f64>], ncols: usize) -> Result<Mat> {
    from_rows(rows, ncols).ok_or_else(|| Error::Invalid("ragged matrix in problem document".into()))
}

fn cost_doc(c: &QuadCost) -> CostDoc {
    CostDoc {
        h: to_rows(&c.h),
        q: c.q.iter().cloned().collect(),
        offset: c.offset,
    }
}

fn cost_from(d: CostDoc) -> Result<QuadCost> {
    let n = d.q.len();
    QuadCost::with_offset(mat(&d.h, n)?, Vector::from_vec(d.q), d.offset)
}

fn sets_from(docs: Vec<SetDoc>) -> Result<Vec<FeasibleSet>> {
    docs.into_iter().map(FeasibleSet::try_from).collect()
}

impl ProblemDocument {
    pub fn new(problem: &Problem) -> Self {
        let doc = match problem {
            Problem::Dcx(p) => ProblemDoc::Dcx {
                costs: p.costs.iter().map(cost_doc).collect(),
                set: SetDoc::from(&p.set),
                strict: p.strict,
            },
            Problem::Dccc(p) => ProblemDoc::Dccc {
                costs: p.costs.iter().map(cost_doc).collect(),
                sets: p.sets.iter().map(SetDoc::from).collect(),
                coupling: p.coupling.iter().map(to_rows).collect(),
                rhs: p.rhs.iter().cloned().collect(),
                row_blocks: p
                    .row_blocks
                    .iter()
                    .map(|b| RowBlockDoc {
                        owner: b.owner,
                        rows: b.rows.clone(),
                        neighbors: b.neighbors.clone(),
                    })
                    .collect(),
            },
            Problem::Ccdc(p) => {
                let mut blocks = Vec::new();
                for i in 0..p.agents() {
                    for j in i..p.agents() {
                        if let Some(h) = &p.blocks[i][j] {
                            blocks.push(BlockDoc { i, j, h: to_rows(h) });
                        }
                    }
                }
                ProblemDoc::Ccdc {
                    blocks,
                    linear: p.linear.iter().map(|q| q.iter().cloned().collect()).collect(),
                    sets: p.sets.iter().map(SetDoc::from).collect(),
                    offset: p.offset,
                }
            }
        };
        Self {
            schema: SCHEMA.to_string(),
            problem: doc,
            graph: None,
            meta: None,
        }
    }

    pub fn with_graph(mut self, graph: GraphDoc) -> Self {
        self.graph = Some(graph);
        self
    }

    pub fn with_meta(mut self, meta: serde_json::Value) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn problem(&self) -> Result<Problem> {
        if self.schema != SCHEMA {
            return Err(Error::Invalid(format!(
                "unsupported schema '{}', expected '{SCHEMA}'",
                self.schema
            )));
        }
        match self.problem.clone() {
            ProblemDoc::Dcx { costs, set, strict } => {
                let costs = costs.into_iter().map(cost_from).collect::<Result<_>>()?;
                Ok(Problem::Dcx(ProblemDcx::new(costs, set.try_into()?, strict)?))
            }
            ProblemDoc::Dccc {
                costs,
                sets,
                coupling,
                rhs,
                row_blocks,
            } => {
                let costs: Vec<QuadCost> = costs.into_iter().map(cost_from).collect::<Result<_>>()?;
                let coupling = coupling
                    .iter()
                    .zip(&costs)
                    .map(|(g, c)| mat(g, c.dim()))
                    .collect::<Result<Vec<_>>>()?;
                let blocks = row_blocks
                    .into_iter()
                    .map(|b| RowBlock {
                        owner: b.owner,
                        rows: b.rows,
                        neighbors: b.neighbors,
                    })
                    .collect();
                Ok(Problem::Dccc(ProblemDccc::with_blocks(
                    costs,
                    sets_from(sets)?,
                    coupling,
                    Vector::from_vec(rhs),
                    blocks,
                )?))
            }
            ProblemDoc::Ccdc {
                blocks,
                linear,
                sets,
                offset,
            } => {
                let m = linear.len();
                let dims: Vec<usize> = linear.iter().map(|q| q.len()).collect();
                let mut grid: Vec<Vec<Option<Mat>>> = vec![vec![None; m]; m];
                for b in blocks {
                    if b.i >= m || b.j >= m || b.i > b.j {
                        return Err(Error::Invalid(format!(
                            "block ({}, {}) is not an upper-triangular index pair",
                            b.i, b.j
                        )));
                    }
                    let h = mat(&b.h, dims[b.j])?;
                    if b.i != b.j {
                        grid[b.j][b.i] = Some(h.transpose());
                    }
                    grid[b.i][b.j] = Some(h);
                }
                Ok(Problem::Ccdc(ProblemCcdc::new(
                    grid,
                    linear.into_iter().map(Vector::from_vec).collect(),
                    sets_from(sets)?,
                    offset,
                )?))
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn costs_roundtrip_bit_exactly(q in prop::collection::vec(-1e6f64..1e6, 1..6), d in 1e-3f64..1e3) {
            let n = q.len();
            let cost = QuadCost::new(Mat::identity(n, n) * d, Vector::from_vec(q)).unwrap();
            let p = Problem::Dcx(ProblemDcx::new(vec![cost], FeasibleSet::cube(n, 1.0).unwrap(), false).unwrap());
            let back = ProblemDocument::from_json(&ProblemDocument::new(&p).to_json().unwrap()).unwrap();
            prop_assert_eq!(back.problem().unwrap(), p);
        }
    }

    #[test]
    fn roundtrip_all_classes() {
        let set = FeasibleSet::cube(2, 1.0).unwrap();
        let cost = QuadCost::new(Mat::identity(2, 2), Vector::from_vec(vec![1.0, -1.0])).unwrap();
        let dcx = Problem::Dcx(ProblemDcx::new(vec![cost.clone(), cost.clone()], set.clone(), true).unwrap());
        let g = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        let dccc = Problem::Dccc(
            ProblemDccc::new(
                vec![cost.clone(), cost.clone()],
                vec![set.clone(), set.clone()],
                vec![g.clone(), g],
                Vector::from_vec(vec![0.5]),
            )
            .unwrap(),
        );
        let off = Mat::from_row_slice(2, 2, &[0.1, 0.2, 0.0, 0.1]);
        let ccdc = Problem::Ccdc(
            ProblemCcdc::new(
                vec![
                    vec![Some(Mat::identity(2, 2)), Some(off.clone())],
                    vec![Some(off.transpose()), Some(Mat::identity(2, 2))],
                ],
                vec![Vector::zeros(2), Vector::zeros(2)],
                vec![set.clone(), set],
                0.5,
            )
            .unwrap(),
        );
        for p in [dcx, dccc, ccdc] {
            let doc = ProblemDocument::new(&p).with_graph(GraphDoc {
                nodes: 2,
                edges: vec![[0, 1], [1, 0]],
            });
            let text = doc.to_json().unwrap();
            let back = ProblemDocument::from_json(&text).unwrap();
            assert_eq!(back.problem().unwrap(), p);
            assert_eq!(back.graph, doc.graph);
        }
    }

    #[test]
    fn wrong_schema_rejected() {
        let set = FeasibleSet::cube(1, 1.0).unwrap();
        let p = Problem::Dcx(ProblemDcx::new(vec![QuadCost::zero(1)], set, false).unwrap());
        let mut doc = ProblemDocument::new(&p);
        doc.schema = "other".into();
        assert!(doc.problem().is_err());
    }
}

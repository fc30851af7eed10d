//! Process ontology: cycle states with expected sensor ranges and robot
//! functions. Supplies the range penalty used as training knowledge and the
//! explanations attached to anomaly predictions.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::kernel::{Graph, KernelError, Tensor, Var};
use crate::predictx::PredictionResult;
use crate::{Real, Scalar};

#[derive(Debug, thiserror::Error)]
pub enum OntologyError {
    #[error("malformed ontology document: {0}")]
    Parse(String),
    #[error("invalid ontology: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("unknown state '{0}'")]
    UnknownState(String),
    #[error("state '{state}' has no range for variable '{variable}'")]
    UnknownVariable { state: String, variable: String },
    #[error("expected {expected} values (one per variable), got {actual}")]
    Length { expected: usize, actual: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableRange {
    pub lo: Real,
    pub hi: Real,
    pub unit: String,
}

impl VariableRange {
    /// Distance outside `[lo, hi]`; zero inside.
    pub fn violation(&self, v: Real) -> Real {
        (self.lo - v).max(0.0) + (v - self.hi).max(0.0)
    }

    pub fn contains(&self, v: Real) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleState {
    pub state_id: String,
    pub description: String,
    pub robot_functions: IndexMap<String, String>,
    pub variable_ranges: IndexMap<String, VariableRange>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OntologyDocument {
    version: String,
    facility_id: String,
    states: Vec<CycleState>,
}

/// Validated, immutable ontology.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessOntology {
    doc: OntologyDocument,
    index: HashMap<String, usize>,
    variables: Vec<String>,
}

impl ProcessOntology {
    pub fn new(
        version: impl Into<String>,
        facility_id: impl Into<String>,
        states: Vec<CycleState>,
    ) -> Result<Self, OntologyError> {
        Self::from_document(OntologyDocument {
            version: version.into(),
            facility_id: facility_id.into(),
            states,
        })
    }

    fn from_document(doc: OntologyDocument) -> Result<Self, OntologyError> {
        let mut problems = Vec::new();
        let mut index = HashMap::new();
        let mut variables: Vec<String> = Vec::new();
        for (i, s) in doc.states.iter().enumerate() {
            if index.insert(s.state_id.clone(), i).is_some() {
                problems.push(format!("duplicate state id '{}'", s.state_id));
            }
            for (name, r) in &s.variable_ranges {
                if !variables.contains(name) {
                    variables.push(name.clone());
                }
                if !r.lo.is_finite() || !r.hi.is_finite() {
                    problems.push(format!(
                        "state '{}' variable '{name}': bounds must be finite",
                        s.state_id
                    ));
                } else if r.lo > r.hi {
                    problems.push(format!(
                        "state '{}' variable '{name}': lo {} > hi {}",
                        s.state_id, r.lo, r.hi
                    ));
                }
            }
        }
        for s in &doc.states {
            for v in &variables {
                if !s.variable_ranges.contains_key(v) {
                    problems.push(format!(
                        "state '{}' is missing a range for variable '{v}'",
                        s.state_id
                    ));
                }
            }
        }
        if doc.states.is_empty() {
            problems.push("ontology has no states".into());
        }
        if !problems.is_empty() {
            return Err(OntologyError::Validation(problems));
        }
        Ok(Self {
            doc,
            index,
            variables,
        })
    }

    pub fn version(&self) -> &str {
        &self.doc.version
    }

    pub fn facility_id(&self) -> &str {
        &self.doc.facility_id
    }

    pub fn states(&self) -> &[CycleState] {
        &self.doc.states
    }

    /// Variable names in document order. Vectors passed to
    /// [`ProcessOntology::range_penalty`] follow this order.
    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn state(&self, state_id: &str) -> Result<&CycleState, OntologyError> {
        self.index
            .get(state_id)
            .map(|&i| &self.doc.states[i])
            .ok_or_else(|| OntologyError::UnknownState(state_id.to_string()))
    }

    pub fn range(&self, state_id: &str, variable: &str) -> Result<&VariableRange, OntologyError> {
        self.state(state_id)?
            .variable_ranges
            .get(variable)
            .ok_or_else(|| OntologyError::UnknownVariable {
                state: state_id.to_string(),
                variable: variable.to_string(),
            })
    }

    /// Lower and upper bounds of every variable in the given state.
    pub fn bounds(&self, state_id: &str) -> Result<(Vec<Real>, Vec<Real>), OntologyError> {
        let s = self.state(state_id)?;
        Ok(self
            .variables
            .iter()
            .map(|v| {
                let r = &s.variable_ranges[v];
                (r.lo, r.hi)
            })
            .unzip())
    }

    fn check_len(&self, n: usize) -> Result<(), OntologyError> {
        if n != self.variables.len() {
            return Err(OntologyError::Length {
                expected: self.variables.len(),
                actual: n,
            });
        }
        Ok(())
    }

    /// Quadratic hinge outside the expected ranges:
    /// `sum_v max(0, lo - v)^2 + max(0, v - hi)^2`.
    pub fn range_penalty(&self, prediction: &[Real], state_id: &str) -> Result<Real, OntologyError> {
        self.check_len(prediction.len())?;
        let s = self.state(state_id)?;
        Ok(self
            .variables
            .iter()
            .zip(prediction)
            .map(|(name, &v)| {
                let r = &s.variable_ranges[name];
                let below = (r.lo - v).max(0.0);
                let above = (v - r.hi).max(0.0);
                below * below + above * above
            })
            .sum())
    }

    /// Same penalty over an explicit subset of named variables.
    pub fn range_penalty_named(
        &self,
        prediction: &[(&str, Real)],
        state_id: &str,
    ) -> Result<Real, OntologyError> {
        let mut total = 0.0;
        for &(name, v) in prediction {
            let r = self.range(state_id, name)?;
            let below = (r.lo - v).max(0.0);
            let above = (v - r.hi).max(0.0);
            total += below * below + above * above;
        }
        Ok(total)
    }

    /// Answers which variables are responsible, what the robots were doing,
    /// and what the expected values were for an observed frame.
    pub fn explain(
        &self,
        prediction: &PredictionResult,
        frame: &[Real],
        state_id: &str,
    ) -> Result<Explanation, OntologyError> {
        self.check_len(frame.len())?;
        let s = self.state(state_id)?;
        let mut responsible: Vec<(Real, ResponsibleVariable)> = self
            .variables
            .iter()
            .zip(frame)
            .filter_map(|(name, &v)| {
                let r = &s.variable_ranges[name];
                (!r.contains(v)).then(|| {
                    (
                        r.violation(v),
                        ResponsibleVariable {
                            variable: name.clone(),
                            observed: v,
                            expected_lo: r.lo,
                            expected_hi: r.hi,
                            unit: r.unit.clone(),
                        },
                    )
                })
            })
            .collect();
        // Stable sort keeps variable order among equal magnitudes.
        responsible.sort_by(|a, b| b.0.total_cmp(&a.0));
        let responsible_variables: Vec<ResponsibleVariable> =
            responsible.into_iter().map(|(_, r)| r).collect();
        let possible_misclassification =
            prediction.predicted_class.is_anomalous() && responsible_variables.is_empty();
        Ok(Explanation {
            responsible_variables,
            state_id: state_id.to_string(),
            state_description: s.description.clone(),
            robot_functions: s.robot_functions.clone(),
            possible_misclassification,
        })
    }

    pub fn to_document_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.doc).expect("ontology serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), OntologyError> {
        fs::write(path, self.to_document_string())?;
        Ok(())
    }
}

/// Parses and validates an ontology document.
pub fn load_ontology(source: &str) -> Result<ProcessOntology, OntologyError> {
    let doc: OntologyDocument =
        serde_json::from_str(source).map_err(|e| OntologyError::Parse(e.to_string()))?;
    ProcessOntology::from_document(doc)
}

pub fn load_ontology_file(path: impl AsRef<Path>) -> Result<ProcessOntology, OntologyError> {
    load_ontology(&fs::read_to_string(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponsibleVariable {
    pub variable: String,
    pub observed: Real,
    pub expected_lo: Real,
    pub expected_hi: Real,
    pub unit: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub responsible_variables: Vec<ResponsibleVariable>,
    pub state_id: String,
    pub state_description: String,
    pub robot_functions: IndexMap<String, String>,
    pub possible_misclassification: bool,
}

impl Explanation {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if self.responsible_variables.is_empty() {
            out.push_str("No variable is outside its expected range");
            if self.possible_misclassification {
                out.push_str("; the anomaly prediction may be a misclassification");
            }
            out.push_str(".\n");
        } else {
            for r in &self.responsible_variables {
                out.push_str(&format!(
                    "{} = {:.3} {} is outside the expected range [{:.3}, {:.3}] for state {}.\n",
                    r.variable, r.observed, r.unit, r.expected_lo, r.expected_hi, self.state_id
                ));
            }
        }
        for (robot, f) in &self.robot_functions {
            out.push_str(&format!("{robot}: {f}\n"));
        }
        out
    }
}

/// Differentiable batch version of the range penalty, averaged over rows.
/// `lo` and `hi` hold the per-row bounds and have the shape of `pred`.
pub fn range_penalty_graph<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    lo: Tensor<T>,
    hi: Tensor<T>,
) -> Result<Var, KernelError> {
    let rows = g.shape(pred).0;
    let lo = g.constant(lo);
    let hi = g.constant(hi);
    let below = g.sub(lo, pred)?;
    let below = g.relu(below);
    let above = g.sub(pred, hi)?;
    let above = g.relu(above);
    let b2 = g.mul(below, below)?;
    let a2 = g.mul(above, above)?;
    let both = g.add(b2, a2)?;
    let s = g.sum(both);
    Ok(g.scale(s, T::one() / T::from_usize(rows.max(1)).unwrap_or_else(T::one)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictx::AnomalyClass;

    pub(crate) fn doc(ranges: &[(&str, f64, f64)]) -> String {
        let vars: Vec<String> = ranges
            .iter()
            .map(|(n, lo, hi)| format!(r#""{n}": {{"lo": {lo}, "hi": {hi}, "unit": "mm"}}"#))
            .collect();
        format!(
            r#"{{"version": "1", "facility_id": "f", "states": [{{"state_id": "S1",
                "description": "load", "robot_functions": {{"R1": "picks the nose cone"}},
                "variable_ranges": {{{}}}}}]}}"#,
            vars.join(",")
        )
    }

    fn prediction(class: AnomalyClass) -> PredictionResult {
        let mut probs = vec![0.0; AnomalyClass::COUNT];
        probs[class.index()] = 1.0;
        PredictionResult::from_probs(vec![0.0; 3], probs)
    }

    #[test]
    fn minimal_document_loads() {
        let o = load_ontology(&doc(&[("V", 0.0, 10.0)])).unwrap();
        assert_eq!(o.states().len(), 1);
        assert_eq!(o.variables(), &["V".to_string()]);
    }

    #[test]
    fn inverted_range_is_named() {
        let err = load_ontology(&doc(&[("V", 5.0, 3.0)])).unwrap_err();
        assert!(matches!(&err, OntologyError::Validation(v) if v[0].contains("'V'")), "{err}");
    }

    #[test]
    fn all_violations_are_listed() {
        let text = r#"{"version": "1", "facility_id": "f", "states": [
            {"state_id": "A", "description": "", "robot_functions": {}, "variable_ranges":
                {"x": {"lo": 2, "hi": 1, "unit": ""}, "y": {"lo": 0, "hi": 1, "unit": ""}}},
            {"state_id": "A", "description": "", "robot_functions": {}, "variable_ranges":
                {"x": {"lo": 0, "hi": 1, "unit": ""}}}]}"#;
        let OntologyError::Validation(v) = load_ontology(text).unwrap_err() else {
            panic!()
        };
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn penalty_cases() {
        let o = load_ontology(&doc(&[("a", 0.0, 1.0), ("b", -1.0, 1.0), ("c", 5.0, 6.0)])).unwrap();
        assert_eq!(o.range_penalty(&[0.5, 0.0, 5.5], "S1").unwrap(), 0.0);
        assert_eq!(o.range_penalty(&[0.5, 3.0, 5.5], "S1").unwrap(), 4.0);
        assert_eq!(o.range_penalty_named(&[("c", 3.0)], "S1").unwrap(), 4.0);
        assert!(matches!(o.range_penalty(&[0.0; 3], "S9"), Err(OntologyError::UnknownState(_))));
        assert!(matches!(
            o.range_penalty_named(&[("zz", 0.0)], "S1"),
            Err(OntologyError::UnknownVariable { .. })
        ));
        assert!(matches!(o.range_penalty(&[0.0; 2], "S1"), Err(OntologyError::Length { .. })));
    }

    #[test]
    fn explanation_lists_single_violation() {
        let o = load_ontology(&doc(&[("V", 0.0, 10.0), ("W", 0.0, 1.0)])).unwrap();
        let e = o.explain(&prediction(AnomalyClass::NoNose), &[12.0, 0.5], "S1").unwrap();
        assert_eq!(e.responsible_variables.len(), 1);
        let r = &e.responsible_variables[0];
        assert_eq!((r.variable.as_str(), r.observed, r.expected_lo, r.expected_hi), ("V", 12.0, 0.0, 10.0));
        assert_eq!(e.robot_functions["R1"], "picks the nose cone");
        assert!(!e.possible_misclassification);
    }

    #[test]
    fn in_range_anomaly_flags_misclassification() {
        let o = load_ontology(&doc(&[("V", 0.0, 10.0)])).unwrap();
        let e = o.explain(&prediction(AnomalyClass::NoBody1), &[3.0], "S1").unwrap();
        assert!(e.responsible_variables.is_empty());
        assert!(e.possible_misclassification);
        let e = o.explain(&prediction(AnomalyClass::Normal), &[3.0], "S1").unwrap();
        assert!(!e.possible_misclassification);
    }

    #[test]
    fn violations_sorted_by_magnitude() {
        let o = load_ontology(&doc(&[("small", 0.0, 1.0), ("big", 0.0, 1.0), ("ok", 0.0, 1.0)])).unwrap();
        let e = o.explain(&prediction(AnomalyClass::NoNose), &[3.0, -5.0, 0.5], "S1").unwrap();
        let names: Vec<&str> = e.responsible_variables.iter().map(|r| r.variable.as_str()).collect();
        assert_eq!(names, ["big", "small"]);
    }

    #[test]
    fn document_round_trip_is_exact() {
        let o = load_ontology(&doc(&[("V", 0.1, 10.25), ("W", -3.0, 1e-7)])).unwrap();
        let text = o.to_document_string();
        let back = load_ontology(&text).unwrap();
        assert_eq!(back, o);
        assert_eq!(back.to_document_string(), text);
    }

    #[test]
    fn graph_penalty_matches_scalar_penalty() {
        let o = load_ontology(&doc(&[("a", 0.0, 1.0), ("b", -1.0, 1.0)])).unwrap();
        let (lo, hi) = o.bounds("S1").unwrap();
        let rows = [[1.5, 0.0], [-0.25, 2.0]];
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::matrix(2, 2, rows.concat()).unwrap());
        let l = range_penalty_graph(
            &mut g,
            p,
            Tensor::matrix(2, 2, [lo.clone(), lo].concat()).unwrap(),
            Tensor::matrix(2, 2, [hi.clone(), hi].concat()).unwrap(),
        )
        .unwrap();
        let expected = (o.range_penalty(&rows[0], "S1").unwrap() + o.range_penalty(&rows[1], "S1").unwrap()) / 2.0;
        assert!((g.value(l).values()[0] - expected).abs() < 1e-15);
    }
}

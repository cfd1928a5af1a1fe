//! Feature typing, actionable boxes, real-world cost models, the two
//! penalty terms of the relaxed search and the coherence projection `cond`.
//!
//! All costs are evaluated in raw feature units. Categorical features are
//! one-hot encoded; during the search they are relaxed to real values and a
//! transition matrix `A` prices a move from the source category `z` to the
//! relaxed target `z~` as `z^T A z~`.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TapError};

/// Cost used for transitions that are not allowed (for example un-earning a
/// degree).
pub const PROHIBITIVE_COST: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Numeric,
    Integer,
    Boolean,
    OneHot,
}

/// Direction a mutable feature may move in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    #[default]
    Any,
    Increase,
    Decrease,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default = "neg_inf")]
    pub lower: f64,
    #[serde(default = "pos_inf")]
    pub upper: f64,
    #[serde(default = "yes")]
    pub mutable: bool,
    #[serde(default)]
    pub direction: Direction,
    /// One-hot group id; required for one-hot members.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Category label of a one-hot member.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

fn yes() -> bool {
    true
}

impl Feature {
    pub fn numeric(name: &str, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numeric,
            lower,
            upper,
            mutable: true,
            direction: Direction::Any,
            group: None,
            category: None,
        }
    }

    pub fn integer(name: &str, lower: f64, upper: f64) -> Self {
        Self {
            kind: FeatureKind::Integer,
            ..Self::numeric(name, lower, upper)
        }
    }

    pub fn boolean(name: &str) -> Self {
        Self {
            kind: FeatureKind::Boolean,
            ..Self::numeric(name, 0.0, 1.0)
        }
    }

    pub fn one_hot(name: &str, group: &str, category: &str) -> Self {
        Self {
            kind: FeatureKind::OneHot,
            group: Some(group.into()),
            category: Some(category.into()),
            ..Self::numeric(name, 0.0, 1.0)
        }
    }

    pub fn immutable(mut self) -> Self {
        self.mutable = false;
        self
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotGroup {
    pub name: String,
    /// Column indices in schema order.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaDef", into = "SchemaDef")]
pub struct FeatureSchema {
    features: Vec<Feature>,
    label_column: String,
    class_labels: Vec<String>,
    groups: Vec<OneHotGroup>,
}

#[derive(Serialize, Deserialize)]
struct SchemaDef {
    features: Vec<Feature>,
    label_column: String,
    class_labels: Vec<String>,
}

impl TryFrom<SchemaDef> for FeatureSchema {
    type Error = TapError;

    /// Boolean and one-hot features without written bounds get `[0, 1]`.
    fn try_from(mut d: SchemaDef) -> Result<Self> {
        for f in &mut d.features {
            if matches!(f.kind, FeatureKind::Boolean | FeatureKind::OneHot) {
                if f.lower == f64::NEG_INFINITY {
                    f.lower = 0.0;
                }
                if f.upper == f64::INFINITY {
                    f.upper = 1.0;
                }
            }
        }
        FeatureSchema::new(d.features, d.label_column, d.class_labels)
    }
}

impl From<FeatureSchema> for SchemaDef {
    fn from(s: FeatureSchema) -> Self {
        SchemaDef {
            features: s.features,
            label_column: s.label_column,
            class_labels: s.class_labels,
        }
    }
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>, label_column: String, class_labels: Vec<String>) -> Result<Self> {
        let bad = |msg: String| Err(TapError::Schema(msg));
        if features.is_empty() {
            return bad("no features".into());
        }
        if class_labels.len() < 2 {
            return bad("at least two class labels are required".into());
        }
        let mut seen = HashSet::new();
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut group_order = Vec::new();
        for (i, f) in features.iter().enumerate() {
            if !seen.insert(f.name.as_str()) {
                return bad(format!("duplicate feature name '{}'", f.name));
            }
            if f.lower.is_nan() || f.upper.is_nan() || f.lower > f.upper {
                return bad(format!("feature '{}' has lower > upper", f.name));
            }
            match f.kind {
                FeatureKind::Boolean | FeatureKind::OneHot if f.lower < 0.0 || f.upper > 1.0 => {
                    return bad(format!("feature '{}' must have bounds inside [0, 1]", f.name));
                }
                _ => {}
            }
            if f.kind == FeatureKind::OneHot {
                let Some(g) = &f.group else {
                    return bad(format!("one-hot feature '{}' has no group", f.name));
                };
                if !groups.contains_key(g) {
                    group_order.push(g.clone());
                }
                groups.entry(g.clone()).or_default().push(i);
            } else if f.group.is_some() {
                return bad(format!("feature '{}' has a group but is not one-hot", f.name));
            }
        }
        let mut out_groups = Vec::with_capacity(group_order.len());
        for g in group_order {
            let members = groups.remove(&g).unwrap();
            if members.len() < 2 {
                return bad(format!("one-hot group '{g}' has fewer than two members"));
            }
            out_groups.push(OneHotGroup { name: g, members });
        }
        Ok(Self {
            features,
            label_column,
            class_labels,
            groups: out_groups,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn label_column(&self) -> &str {
        &self.label_column
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn groups(&self) -> &[OneHotGroup] {
        &self.groups
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| TapError::Schema(format!("unknown feature '{name}'")))
    }

    pub fn group(&self, name: &str) -> Result<&OneHotGroup> {
        self.groups
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| TapError::Schema(format!("unknown one-hot group '{name}'")))
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.class_labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| TapError::Schema(format!("unknown class label '{label}'")))
    }

    pub fn mutable_mask(&self) -> Vec<bool> {
        self.features.iter().map(|f| f.mutable).collect()
    }

    pub(crate) fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(TapError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// The box `A(x)` for an individual.
    ///
    /// Immutable features are frozen at `x_i`; direction-restricted features
    /// get `x_i` as their lower or upper bound. Schema bounds are widened to
    /// include `x_i` so that the origin is always feasible.
    pub fn actionable_box(&self, x: &[f64]) -> Result<ActionableBox> {
        self.check_len(x)?;
        let mut lower = Vec::with_capacity(self.dim());
        let mut upper = Vec::with_capacity(self.dim());
        for (f, &xi) in self.features.iter().zip(x) {
            if !xi.is_finite() {
                return Err(TapError::NonFinite(format!("feature '{}'", f.name)));
            }
            let (mut l, mut u) = if f.mutable {
                (f.lower.min(xi), f.upper.max(xi))
            } else {
                (xi, xi)
            };
            match f.direction {
                Direction::Increase => l = l.max(xi),
                Direction::Decrease => u = u.min(xi),
                Direction::Any => {}
            }
            if l > u {
                l = xi;
                u = xi;
            }
            lower.push(l);
            upper.push(u);
        }
        Ok(ActionableBox { lower, upper })
    }

    /// True when integers and booleans are integral and every one-hot group
    /// holds exactly one 1.
    pub fn is_coherent(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        for (f, &v) in self.features.iter().zip(x) {
            match f.kind {
                FeatureKind::Integer if v.fract() != 0.0 => return false,
                FeatureKind::Boolean | FeatureKind::OneHot if v != 0.0 && v != 1.0 => return false,
                _ => {}
            }
        }
        self.groups
            .iter()
            .all(|g| g.members.iter().map(|&i| x[i]).sum::<f64>() == 1.0)
    }
}

/// Per-feature bounds `[l_i, u_i]` for one individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionableBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ActionableBox {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.lower[i] == self.upper[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyConfig {
    /// Weight of the actionability (box) penalty.
    pub g: f64,
    /// Weight of the one-hot coherence penalty.
    pub p: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self { g: 1000.0, p: 1000.0 }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0) || !(self.p > 0.0) {
            return Err(TapError::Config(format!(
                "penalty weights must be positive (G = {}, P = {})",
                self.g, self.p
            )));
        }
        Ok(())
    }
}

/// `b(x~) = G sum_i (max(0, x~_i - u_i) + max(0, l_i - x~_i))` and its
/// gradient (zero on the boundary itself).
pub fn penalty_actionable(x: &[f64], bx: &ActionableBox, pc: &PenaltyConfig) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; x.len()];
    for (i, &v) in x.iter().enumerate() {
        if v > bx.upper[i] {
            value += v - bx.upper[i];
            grad[i] = pc.g;
        } else if v < bx.lower[i] {
            value += bx.lower[i] - v;
            grad[i] = -pc.g;
        }
    }
    (pc.g * value, grad)
}

/// `p(x~) = P sum_groups (1 - sum_group x~)^2` and its gradient.
pub fn penalty_coherence(x: &[f64], schema: &FeatureSchema, pc: &PenaltyConfig) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; x.len()];
    for g in schema.groups() {
        let gap = 1.0 - g.members.iter().map(|&i| x[i]).sum::<f64>();
        value += gap * gap;
        for &i in &g.members {
            grad[i] = -2.0 * pc.p * gap;
        }
    }
    (pc.p * value, grad)
}

/// Projects a relaxed point onto the coherent space: integers and booleans
/// are rounded half away from zero and clipped, numeric features clipped,
/// and each one-hot group set to the indicator of its largest member (ties
/// to the lowest index, among members the box allows to be 1).
pub fn cond(x: &[f64], schema: &FeatureSchema, bx: &ActionableBox) -> Vec<f64> {
    let mut out = x.to_vec();
    for (i, f) in schema.features().iter().enumerate() {
        let v = match f.kind {
            FeatureKind::Numeric => x[i],
            FeatureKind::Integer | FeatureKind::Boolean => x[i].round(),
            FeatureKind::OneHot => continue,
        };
        out[i] = v.clamp(bx.lower[i], bx.upper[i]);
    }
    for g in schema.groups() {
        let forced = g.members.iter().copied().find(|&i| bx.lower[i] >= 1.0);
        let allowed: Vec<usize> = g
            .members
            .iter()
            .copied()
            .filter(|&i| bx.upper[i] >= 1.0)
            .collect();
        let pool = if allowed.is_empty() { &g.members } else { &allowed };
        let winner = forced.unwrap_or_else(|| {
            let mut best = pool[0];
            for &i in pool {
                if x[i] > x[best] {
                    best = i;
                }
            }
            best
        });
        for &i in &g.members {
            out[i] = if i == winner { 1.0 } else { 0.0 };
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTerm {
    pub feature: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTerm {
    pub group: String,
    /// Category order of the matrix rows and columns; defaults to the
    /// order of the group's members in the schema.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
    /// `matrix[i][j]` is the cost of moving from category `i` to `j`.
    pub matrix: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedTerm {
    pub feature: String,
    /// Paid once when the boolean goes from 0 to 1.
    pub cost: f64,
}

/// Cost terms as written in a configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostSpec {
    pub quadratic: Vec<WeightedTerm>,
    pub linear: Vec<WeightedTerm>,
    pub transition: Vec<TransitionTerm>,
    pub fixed: Vec<FixedTerm>,
}

#[derive(Debug, Clone, PartialEq)]
struct ResolvedTransition {
    /// Columns in matrix order.
    columns: Vec<usize>,
    matrix: Vec<Vec<f64>>,
}

/// A [`CostSpec`] resolved against a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    dim: usize,
    quadratic: Vec<(usize, f64)>,
    linear: Vec<(usize, f64)>,
    transition: Vec<ResolvedTransition>,
    fixed: Vec<(usize, f64)>,
}

impl CostModel {
    pub fn new(spec: &CostSpec, schema: &FeatureSchema) -> Result<Self> {
        let bad = |msg: String| Err(TapError::CostModel(msg));
        let resolve = |terms: &[WeightedTerm]| -> Result<Vec<(usize, f64)>> {
            terms
                .iter()
                .map(|t| {
                    if !t.weight.is_finite() {
                        return Err(TapError::CostModel(format!("weight of '{}' is not finite", t.feature)));
                    }
                    Ok((schema.index_of(&t.feature)?, t.weight))
                })
                .collect()
        };
        let quadratic = resolve(&spec.quadratic)?;
        let linear = resolve(&spec.linear)?;

        let mut transition = Vec::new();
        for t in &spec.transition {
            let group = schema.group(&t.group)?;
            let columns = match &t.categories {
                None => group.members.clone(),
                Some(cats) => {
                    let mut cols = Vec::with_capacity(cats.len());
                    for c in cats {
                        let col = group
                            .members
                            .iter()
                            .copied()
                            .find(|&i| schema.features()[i].category.as_deref() == Some(c.as_str()));
                        match col {
                            Some(col) => cols.push(col),
                            None => return bad(format!("group '{}' has no category '{c}'", t.group)),
                        }
                    }
                    if cols.len() != group.members.len() {
                        return bad(format!("categories of '{}' do not cover the group", t.group));
                    }
                    cols
                }
            };
            let l = columns.len();
            if t.matrix.len() != l || t.matrix.iter().any(|r| r.len() != l) {
                return bad(format!("transition matrix for '{}' must be {l}x{l}", t.group));
            }
            for (i, row) in t.matrix.iter().enumerate() {
                if row.iter().any(|v| !v.is_finite()) {
                    return bad(format!("transition matrix for '{}' has a non-finite entry", t.group));
                }
                if row[i] != 0.0 {
                    return bad(format!("transition matrix for '{}' has a nonzero diagonal", t.group));
                }
            }
            transition.push(ResolvedTransition {
                columns,
                matrix: t.matrix.clone(),
            });
        }

        let mut fixed = Vec::new();
        for t in &spec.fixed {
            let i = schema.index_of(&t.feature)?;
            if schema.features()[i].kind != FeatureKind::Boolean {
                return bad(format!("fixed-cost feature '{}' must be boolean", t.feature));
            }
            fixed.push((i, t.cost));
        }
        Ok(Self {
            dim: schema.dim(),
            quadratic,
            linear,
            transition,
            fixed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check(&self, x: &[f64], xt: &[f64]) -> Result<()> {
        for v in [x, xt] {
            if v.len() != self.dim {
                return Err(TapError::DimensionMismatch {
                    expected: self.dim,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }

    /// `d_X(x, x~)` in raw units; may be negative.
    pub fn cost(&self, x: &[f64], xt: &[f64]) -> Result<f64> {
        self.check(x, xt)?;
        let mut total = 0.0;
        for &(i, w) in &self.quadratic {
            let d = xt[i] - x[i];
            total += w * d * d;
        }
        for &(i, w) in &self.linear {
            total += w * (xt[i] - x[i]);
        }
        for t in &self.transition {
            for (a, &ci) in t.columns.iter().enumerate() {
                if x[ci] == 0.0 {
                    continue;
                }
                for (b, &cj) in t.columns.iter().enumerate() {
                    total += x[ci] * t.matrix[a][b] * xt[cj];
                }
            }
        }
        for &(i, c) in &self.fixed {
            total += c * (xt[i] - x[i]).max(0.0);
        }
        Ok(total)
    }

    /// Gradient of [`cost`](CostModel::cost) in `x~`.
    pub fn cost_grad(&self, x: &[f64], xt: &[f64]) -> Result<Vec<f64>> {
        self.check(x, xt)?;
        let mut g = vec![0.0; self.dim];
        for &(i, w) in &self.quadratic {
            g[i] += 2.0 * w * (xt[i] - x[i]);
        }
        for &(i, w) in &self.linear {
            g[i] += w;
        }
        for t in &self.transition {
            for (a, &ci) in t.columns.iter().enumerate() {
                if x[ci] == 0.0 {
                    continue;
                }
                for (b, &cj) in t.columns.iter().enumerate() {
                    g[cj] += x[ci] * t.matrix[a][b];
                }
            }
        }
        for &(i, c) in &self.fixed {
            if xt[i] > x[i] {
                g[i] += c;
            }
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                Feature::numeric("hours", 0.0, 99.0),
                Feature::integer("age", 17.0, 90.0).immutable(),
                Feature::boolean("phone"),
                Feature::one_hot("edu_a", "edu", "a"),
                Feature::one_hot("edu_b", "edu", "b"),
                Feature::one_hot("edu_c", "edu", "c"),
                Feature::one_hot("r_x", "region", "x"),
                Feature::one_hot("r_y", "region", "y"),
            ],
            "label".into(),
            vec!["no".into(), "yes".into()],
        )
        .unwrap()
    }

    fn cost_model(s: &FeatureSchema) -> CostModel {
        let spec = CostSpec {
            quadratic: vec![WeightedTerm { feature: "hours".into(), weight: 0.1 }],
            linear: vec![WeightedTerm { feature: "age".into(), weight: -2.0 }],
            transition: vec![TransitionTerm {
                group: "edu".into(),
                categories: None,
                matrix: vec![vec![0.0, 2.0, 5.0], vec![PROHIBITIVE_COST, 0.0, 3.0], vec![7.0, 1.0, 0.0]],
                units: Some("years".into()),
            }],
            fixed: vec![FixedTerm { feature: "phone".into(), cost: 50.0 }],
        };
        CostModel::new(&spec, s).unwrap()
    }

    fn origin() -> Vec<f64> {
        vec![40.0, 30.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]
    }

    #[test]
    fn schema_validation() {
        let one_member = vec![Feature::one_hot("a", "g", "a")];
        assert!(FeatureSchema::new(one_member, "y".into(), vec!["0".into(), "1".into()]).is_err());
        let bad_bounds = vec![Feature::numeric("a", 2.0, 1.0)];
        assert!(FeatureSchema::new(bad_bounds, "y".into(), vec!["0".into(), "1".into()]).is_err());
        let dup = vec![Feature::numeric("a", 0.0, 1.0), Feature::numeric("a", 0.0, 1.0)];
        assert!(FeatureSchema::new(dup, "y".into(), vec!["0".into(), "1".into()]).is_err());
        assert_eq!(schema().groups().len(), 2);
    }

    #[test]
    fn zero_cost_at_origin() {
        let s = schema();
        let cm = cost_model(&s);
        assert_eq!(cm.cost(&origin(), &origin()).unwrap(), 0.0);
    }

    #[test]
    fn individual_terms() {
        let s = schema();
        let cm = cost_model(&s);
        let x = origin();
        let mut xt = x.clone();
        xt[0] += 3.0;
        assert_relative_eq!(cm.cost(&x, &xt).unwrap(), 0.9, max_relative = 1e-12);
        let mut xt = x.clone();
        xt[4] = 0.0;
        xt[5] = 1.0;
        assert_eq!(cm.cost(&x, &xt).unwrap(), 3.0);
        let mut xt = x.clone();
        xt[2] = 1.0;
        assert_eq!(cm.cost(&x, &xt).unwrap(), 50.0);
        assert!(cm.cost(&x, &xt[..3]).is_err());
    }

    #[test]
    fn transition_gradient_is_source_row() {
        let s = schema();
        let cm = cost_model(&s);
        let g = cm.cost_grad(&origin(), &origin()).unwrap();
        assert_eq!(&g[3..6], &[PROHIBITIVE_COST, 0.0, 3.0]);
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn cost_gradient_matches_differences() {
        let s = schema();
        let cm = cost_model(&s);
        let x = origin();
        let xt = vec![41.3, 30.0, 0.4, 0.2, 0.7, 0.3, 0.6, 0.5];
        let g = cm.cost_grad(&x, &xt).unwrap();
        let h = 1e-6;
        for i in 0..xt.len() {
            let mut a = xt.clone();
            let mut b = xt.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (cm.cost(&x, &a).unwrap() - cm.cost(&x, &b).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "coord {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn penalty_examples() {
        let bx = ActionableBox { lower: vec![0.0; 3], upper: vec![1.0; 3] };
        let pc = PenaltyConfig::default();
        assert_eq!(penalty_actionable(&[0.5, 0.0, 1.0], &bx, &pc).0, 0.0);
        let (v, g) = penalty_actionable(&[1.5, 0.5, 0.5], &bx, &pc);
        assert_eq!(v, 500.0);
        assert_eq!(g, vec![1000.0, 0.0, 0.0]);
        let (v, g) = penalty_actionable(&[-0.25, -0.25, 0.5], &bx, &pc);
        assert_eq!(v, 500.0);
        assert_eq!(g, vec![-1000.0, -1000.0, 0.0]);
    }

    #[test]
    fn coherence_examples() {
        let s = schema();
        let pc = PenaltyConfig::default();
        assert_eq!(penalty_coherence(&origin(), &s, &pc).0, 0.0);
        let mut x = origin();
        x[3] = 0.5;
        let (v, g) = penalty_coherence(&x, &s, &pc);
        assert_eq!(v, 250.0);
        assert_eq!(&g[3..6], &[1000.0, 1000.0, 1000.0]);
        let mut x = origin();
        x[4] = 0.0;
        x[6] = 0.0;
        assert_eq!(penalty_coherence(&x, &s, &pc).0, 2000.0);
    }

    #[test]
    fn cond_examples() {
        let s = schema();
        let x = origin();
        let bx = s.actionable_box(&x).unwrap();
        let mut xt = x.clone();
        xt[2] = 0.7;
        xt[3] = 0.2;
        xt[4] = 0.9;
        xt[5] = 0.4;
        let c = cond(&xt, &s, &bx);
        assert_eq!(c[2], 1.0);
        assert_eq!(&c[3..6], &[0.0, 1.0, 0.0]);
        assert_eq!(cond(&x, &s, &bx), x);
        assert!(s.is_coherent(&c));
    }

    #[test]
    fn cond_rounds_half_away_and_clips() {
        let s = schema();
        let x = origin();
        let bx = s.actionable_box(&x).unwrap();
        let mut xt = x.clone();
        xt[0] = 120.0;
        xt[1] = 30.5;
        xt[2] = 0.5;
        let c = cond(&xt, &s, &bx);
        assert_eq!(c[0], 99.0);
        // immutable age is pinned to the individual's value
        assert_eq!(c[1], 30.0);
        assert_eq!(c[2], 1.0);
    }

    #[test]
    fn box_freezes_immutables_and_directions() {
        let mut features = schema().features().to_vec();
        features[0] = Feature::numeric("hours", 0.0, 99.0).with_direction(Direction::Increase);
        let s = FeatureSchema::new(features, "label".into(), vec!["no".into(), "yes".into()]).unwrap();
        let bx = s.actionable_box(&origin()).unwrap();
        assert_eq!((bx.lower[0], bx.upper[0]), (40.0, 99.0));
        assert!(bx.is_frozen(1));
        assert!(bx.contains(&origin()));
    }

    #[test]
    fn invalid_cost_specs() {
        let s = schema();
        let spec = CostSpec {
            transition: vec![TransitionTerm {
                group: "region".into(),
                categories: None,
                matrix: vec![vec![1.0, 1.0], vec![1.0, 0.0]],
                units: None,
            }],
            ..CostSpec::default()
        };
        assert!(CostModel::new(&spec, &s).is_err());
        let spec = CostSpec {
            quadratic: vec![WeightedTerm { feature: "nope".into(), weight: 1.0 }],
            ..CostSpec::default()
        };
        assert!(CostModel::new(&spec, &s).is_err());
    }
}

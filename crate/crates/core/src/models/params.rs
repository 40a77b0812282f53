use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One labeled parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub label: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamGroup {
    pub fn new(label: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        let g = Self {
            label: label.into(),
            shape,
            values,
        };
        debug_assert_eq!(g.shape.iter().product::<usize>(), g.values.len(), "{}", g.label);
        g
    }

    pub fn zeros(label: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self::new(label, shape, vec![0.0; len])
    }

    /// Label of element `k`, e.g. `A[1,0]`.
    pub fn element_label(&self, k: usize) -> String {
        let mut idx = Vec::with_capacity(self.shape.len());
        let mut rem = k;
        for &dim in self.shape.iter().rev() {
            idx.push(rem % dim.max(1));
            rem /= dim.max(1);
        }
        idx.reverse();
        let parts: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
        format!("{}[{}]", self.label, parts.join(","))
    }
}

/// Ordered labeled parameter groups. Serializes as a JSON object keyed by
/// label, in group order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamBundle {
    pub groups: Vec<ParamGroup>,
}

/// Gradients share the parameter layout.
pub type GradientBundle = ParamBundle;

impl ParamBundle {
    pub fn new(groups: Vec<ParamGroup>) -> Self {
        Self { groups }
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn group(&self, label: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.label == label)
    }

    pub fn group_mut(&mut self, label: &str) -> Option<&mut ParamGroup> {
        self.groups.iter_mut().find(|g| g.label == label)
    }

    pub fn values(&self, label: &str) -> Result<&[f64]> {
        self.group(label)
            .map(|g| g.values.as_slice())
            .ok_or_else(|| Error::Contract(format!("missing parameter group {label}")))
    }

    pub fn labels(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.label.as_str()).collect()
    }

    /// Per-element labels in flat order.
    pub fn element_labels(&self) -> Vec<String> {
        self.groups
            .iter()
            .flat_map(|g| (0..g.values.len()).map(move |k| g.element_label(k)))
            .collect()
    }

    /// Group label of every flat element.
    pub fn element_groups(&self) -> Vec<&str> {
        self.groups
            .iter()
            .flat_map(|g| std::iter::repeat_n(g.label.as_str(), g.values.len()))
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for g in &self.groups {
            out.extend_from_slice(&g.values);
        }
        out
    }

    /// Same layout as `self`, values taken from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        crate::error::check_dim(self.len(), flat.len(), "flat parameter vector")?;
        let mut out = self.clone();
        let mut k = 0;
        for g in &mut out.groups {
            let n = g.values.len();
            g.values.copy_from_slice(&flat[k..k + n]);
            k += n;
        }
        Ok(out)
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.groups
            .iter_mut()
            .for_each(|g| g.values.iter_mut().for_each(|v| *v = 0.0));
        out
    }

    pub fn norm(&self) -> f64 {
        self.groups
            .iter()
            .flat_map(|g| g.values.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Labels of groups holding non-finite values.
    pub fn non_finite_groups(&self) -> Vec<String> {
        self.groups
            .iter()
            .filter(|g| g.values.iter().any(|v| !v.is_finite()))
            .map(|g| g.label.clone())
            .collect()
    }

    /// Adds `other` elementwise; layouts must match.
    pub fn add_assign(&mut self, other: &ParamBundle) -> Result<()> {
        crate::error::check_dim(self.groups.len(), other.groups.len(), "parameter group count")?;
        for (a, b) in self.groups.iter_mut().zip(&other.groups) {
            if a.label != b.label {
                return Err(Error::Contract(format!(
                    "group label mismatch: {} vs {}",
                    a.label, b.label
                )));
            }
            crate::error::check_dim(a.values.len(), b.values.len(), "parameter group length")?;
            a.values.iter_mut().zip(&b.values).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    /// Copies values from groups of `other` with matching labels and shapes.
    pub fn assign_from(&mut self, other: &ParamBundle) -> Result<()> {
        for g in &mut self.groups {
            let src = other
                .group(&g.label)
                .ok_or_else(|| Error::Contract(format!("missing parameter group {}", g.label)))?;
            if src.shape != g.shape {
                return Err(Error::DimensionMismatch {
                    expected: g.values.len(),
                    got: src.values.len(),
                    context: "parameter group shape",
                });
            }
            g.values.copy_from_slice(&src.values);
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct GroupBody {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Serialize for ParamBundle {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.groups.len()))?;
        for g in &self.groups {
            map.serialize_entry(
                &g.label,
                &GroupBody {
                    shape: g.shape.clone(),
                    values: g.values.clone(),
                },
            )?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ParamBundle {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct BundleVisitor;
        impl<'de> Visitor<'de> for BundleVisitor {
            type Value = ParamBundle;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object of labeled parameter groups")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<ParamBundle, A::Error> {
                let mut groups = Vec::new();
                while let Some((label, body)) = access.next_entry::<String, GroupBody>()? {
                    if body.shape.iter().product::<usize>() != body.values.len() {
                        return Err(serde::de::Error::custom(format!(
                            "group {label}: shape does not match value count"
                        )));
                    }
                    groups.push(ParamGroup {
                        label,
                        shape: body.shape,
                        values: body.values,
                    });
                }
                Ok(ParamBundle { groups })
            }
        }
        deserializer.deserialize_map(BundleVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip_preserves_order() {
        let b = ParamBundle::new(vec![
            ParamGroup::new("z", vec![2], vec![1.0, 2.0]),
            ParamGroup::new("a", vec![1, 2], vec![3.0, 4.0]),
        ]);
        let s = serde_json::to_string(&b).unwrap();
        assert!(s.find("\"z\"").unwrap() < s.find("\"a\"").unwrap());
        let back: ParamBundle = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
        assert_eq!(b.element_labels(), vec!["z[0]", "z[1]", "a[0,0]", "a[0,1]"]);
        assert!(serde_json::from_str::<ParamBundle>(r#"{"x":{"shape":[3],"values":[1]}}"#).is_err());
    }

    #[test]
    fn flat_roundtrip() {
        let b = ParamBundle::new(vec![
            ParamGroup::new("p", vec![2], vec![1.0, 2.0]),
            ParamGroup::new("q", vec![1], vec![3.0]),
        ]);
        let f = b.flatten();
        assert_eq!(f, vec![1.0, 2.0, 3.0]);
        let c = b.with_flat(&[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(c.values("q").unwrap(), &[6.0]);
        assert!(b.with_flat(&[1.0]).is_err());
    }
}

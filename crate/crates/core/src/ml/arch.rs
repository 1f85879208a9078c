use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[serde(rename = "lr")]
    LogisticRegression,
    Mlp,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::LogisticRegression => "lr",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "lr" => Some(ModelKind::LogisticRegression),
            "mlp" => Some(ModelKind::Mlp),
            _ => None,
        }
    }
}

/// Shape of a model: family, input width, hidden widths and class count.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub kind: ModelKind,
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

/// One dense layer's location inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct LayerSpan {
    pub inp: usize,
    pub out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl ArchDescriptor {
    pub fn logistic(input_dim: usize, num_classes: usize) -> Self {
        Self { kind: ModelKind::LogisticRegression, input_dim, hidden_dims: Vec::new(), num_classes }
    }

    pub fn mlp(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Self {
        Self { kind: ModelKind::Mlp, input_dim, hidden_dims, num_classes }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 {
            return Err(Error::Config("input_dim must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        match self.kind {
            ModelKind::LogisticRegression if !self.hidden_dims.is_empty() => {
                Err(Error::Config("logistic regression takes no hidden layers".into()))
            }
            ModelKind::Mlp if self.hidden_dims.is_empty() => {
                Err(Error::Config("an MLP needs at least one hidden layer".into()))
            }
            _ if self.hidden_dims.contains(&0) => {
                Err(Error::Config("hidden widths must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.num_classes);
        w
    }

    /// Weight blocks come first (layer by layer), then bias blocks.
    pub(crate) fn layers(&self) -> Vec<LayerSpan> {
        let widths = self.widths();
        let weights: usize = widths.windows(2).map(|p| p[0] * p[1]).sum();
        let mut w_off = 0;
        let mut b_off = weights;
        widths
            .windows(2)
            .map(|p| {
                let span = LayerSpan { inp: p[0], out: p[1], weight_offset: w_off, bias_offset: b_off };
                w_off += p[0] * p[1];
                b_off += p[1];
                span
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

impl fmt::Display for ArchDescriptor {
    /// `<kind>:<in>:<hidden,...|->:<classes>`, the form used in query text.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hidden = if self.hidden_dims.is_empty() {
            "-".to_string()
        } else {
            self.hidden_dims.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
        };
        write!(f, "{}:{}:{}:{}", self.kind.tag(), self.input_dim, hidden, self.num_classes)
    }
}

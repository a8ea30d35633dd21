use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::PoolKind;

/// Candidate operation on a cell edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperationKind {
    #[serde(rename = "std_conv_3")]
    StdConv3,
    #[serde(rename = "std_conv_5")]
    StdConv5,
    #[serde(rename = "std_conv_7")]
    StdConv7,
    #[serde(rename = "dil_conv_3")]
    DilConv3,
    #[serde(rename = "dil_conv_5")]
    DilConv5,
    #[serde(rename = "dil_conv_7")]
    DilConv7,
    #[serde(rename = "max_pool_3")]
    MaxPool3,
    #[serde(rename = "avg_pool_3")]
    AvgPool3,
    #[serde(rename = "skip")]
    Skip,
    #[serde(rename = "zero")]
    Zero,
}

/// What an operation computes, independent of its weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpShape {
    Conv { kernel: usize, dilation: usize },
    Pool(PoolKind),
    Identity,
    Zero,
}

impl OperationKind {
    pub const ALL: [OperationKind; 10] = [
        OperationKind::StdConv3,
        OperationKind::StdConv5,
        OperationKind::StdConv7,
        OperationKind::DilConv3,
        OperationKind::DilConv5,
        OperationKind::DilConv7,
        OperationKind::MaxPool3,
        OperationKind::AvgPool3,
        OperationKind::Skip,
        OperationKind::Zero,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OperationKind::StdConv3 => "std_conv_3",
            OperationKind::StdConv5 => "std_conv_5",
            OperationKind::StdConv7 => "std_conv_7",
            OperationKind::DilConv3 => "dil_conv_3",
            OperationKind::DilConv5 => "dil_conv_5",
            OperationKind::DilConv7 => "dil_conv_7",
            OperationKind::MaxPool3 => "max_pool_3",
            OperationKind::AvgPool3 => "avg_pool_3",
            OperationKind::Skip => "skip",
            OperationKind::Zero => "zero",
        }
    }

    pub fn shape(self) -> OpShape {
        use OperationKind::*;
        match self {
            StdConv3 => OpShape::Conv { kernel: 3, dilation: 1 },
            StdConv5 => OpShape::Conv { kernel: 5, dilation: 1 },
            StdConv7 => OpShape::Conv { kernel: 7, dilation: 1 },
            DilConv3 => OpShape::Conv { kernel: 3, dilation: 2 },
            DilConv5 => OpShape::Conv { kernel: 5, dilation: 2 },
            DilConv7 => OpShape::Conv { kernel: 7, dilation: 2 },
            MaxPool3 => OpShape::Pool(PoolKind::Max),
            AvgPool3 => OpShape::Pool(PoolKind::Avg),
            Skip => OpShape::Identity,
            Zero => OpShape::Zero,
        }
    }

    pub fn is_conv(self) -> bool {
        matches!(self.shape(), OpShape::Conv { .. })
    }
}

impl fmt::Display for OperationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OperationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OperationKind::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown operation `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_distinct_members_with_round_trip_names() {
        let names: std::collections::HashSet<&str> =
            OperationKind::ALL.iter().map(|o| o.as_str()).collect();
        assert_eq!(names.len(), 10);
        for op in OperationKind::ALL {
            assert_eq!(op.as_str().parse::<OperationKind>().unwrap(), op);
            let json = serde_json::to_string(&op).unwrap();
            assert_eq!(json, format!("\"{}\"", op.as_str()));
        }
        assert!("sep_conv_3".parse::<OperationKind>().is_err());
    }

    #[test]
    fn dilated_convs_use_dilation_two() {
        assert_eq!(OperationKind::DilConv7.shape(), OpShape::Conv { kernel: 7, dilation: 2 });
        assert_eq!(OperationKind::StdConv5.shape(), OpShape::Conv { kernel: 5, dilation: 1 });
        assert_eq!(OperationKind::ALL.iter().filter(|o| o.is_conv()).count(), 6);
    }
}

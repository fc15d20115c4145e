use std::fmt;

/// Which side of the balance sheet a two-vector component refers to.
///
/// All two-vectors in this crate are ordered `(equity, liability)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Equity,
    Liability,
}

impl Component {
    pub fn index(self) -> usize {
        match self {
            Component::Equity => 0,
            Component::Liability => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Component::Equity
        } else {
            Component::Liability
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Equity => f.write_str("equity"),
            Component::Liability => f.write_str("liability"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{field} at row {row} ({component}) is {value}; must be strictly positive and finite")]
    NonPositiveInput {
        field: &'static str,
        row: usize,
        component: Component,
        value: f64,
    },

    #[error(
        "infeasible linearization at period {period} ({component}): expected payout-to-value \
         exp(varphi) = {exp_varphi} must be below 1"
    )]
    InfeasibleLinearization {
        period: usize,
        component: Component,
        exp_varphi: f64,
    },

    #[error("innovation covariance at period {period} is numerically singular")]
    IllConditionedInnovation { period: usize },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: String },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;

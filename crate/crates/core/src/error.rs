use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contour parse error: {0}")]
    Parse(String),

    #[error("too few points: got {found}, need at least {min}")]
    TooFewPoints { found: usize, min: usize },

    #[error("open contours are not supported")]
    OpenContour,

    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),

    #[error("consecutive points {0} and {1} coincide")]
    CoincidentPoints(usize, usize),

    #[error("contour is not simple: intersecting segments {}", fmt_pairs(.0))]
    NotSimple(Vec<(usize, usize)>),

    #[error("no unique plane: contour points are collinear")]
    DegeneratePlane,

    #[error("projection is not one-to-one: intersecting projected segments {}", fmt_pairs(.0))]
    NotGraphical(Vec<(usize, usize)>),

    #[error("point correspondence mismatch: planar contour has {planar} points, contour has {spatial}")]
    Mismatch { planar: usize, spatial: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain too thin: grid has no interior node")]
    DomainTooThin,

    #[error("grid is missing boundary {0}")]
    GridIncomplete(&'static str),

    #[error("linear system has no unknowns")]
    NoUnknowns,

    #[error("singular matrix: zero pivot at row {row}")]
    SingularMatrix { row: usize },

    #[error("linear solver did not converge after {iterations} refinement steps (relative residual {residual:e})")]
    LinearSolve { residual: f64, iterations: usize },

    #[error("{stage} diverged at iteration {iteration}: residual {residual:e} (best {best:e})")]
    Diverged {
        stage: &'static str,
        iteration: usize,
        residual: f64,
        best: f64,
        history: Vec<f64>,
    },

    #[error("singular Monge-Ampere Jacobian; ellipticity lost at {} nodes", .nodes.len())]
    SingularJacobian { nodes: Vec<(usize, usize)> },

    #[error("coordinate map folds over: non-positive Jacobian at {count} interior nodes")]
    FoldedMap { count: usize },

    #[error("empty domain: nothing to mesh")]
    EmptyDomain,

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

fn fmt_pairs(pairs: &[(usize, usize)]) -> String {
    let shown: Vec<String> = pairs
        .iter()
        .take(8)
        .map(|(a, b)| format!("({a}, {b})"))
        .collect();
    let mut s = shown.join(", ");
    if pairs.len() > 8 {
        s.push_str(&format!(" and {} more", pairs.len() - 8));
    }
    s
}

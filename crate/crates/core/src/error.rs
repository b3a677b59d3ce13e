use std::path::PathBuf;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad raster file {path}: {reason}")]
    RasterFormat { path: PathBuf, reason: String },

    #[error("mask file {path} contains intermediate gray value {value}; masks must be 0 or maxval")]
    MaskGrayValue { path: PathBuf, value: u16 },

    #[error("point file {path}, line {line}: {reason}")]
    PointParse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("bad metadata file {path}: {reason}")]
    MetaFormat { path: PathBuf, reason: String },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("box ({x0},{y0}) {w}x{h} exceeds raster bounds {width}x{height}")]
    OutOfBounds {
        x0: i64,
        y0: i64,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },

    #[error("scale range produces {levels} difference-of-Gaussians levels; at least 3 are required")]
    DegenerateScaleRange { levels: usize },

    #[error("no cluster found: all points labeled as noise (try a larger eps or smaller min-pts)")]
    NoCluster,

    #[error("template crop over an all-zero region")]
    EmptyTemplate,

    #[error("template ({tw}x{th}) larger than padded scene ({sw}x{sh})")]
    TemplateTooLarge { tw: u32, th: u32, sw: u32, sh: u32 },

    #[error("empty match set")]
    EmptyMatchSet,

    #[error("synthetic cluster does not fit inside the scene with the requested margin")]
    ClusterDoesNotFit,

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Parameter containers and the layers built on the tape.

mod layers;
mod params;

pub use layers::{
    adain_site, dropout, kaiming_uniform, BatchNorm2d, ClassEmbedding, ClassStats, Conv2d, Linear, ADAIN_EPS,
    SIGMA_RAW_UNIT,
};
pub use params::{Bound, Mode, ParamEntry, ParamId, ParamKind, ParamStore, StatUpdates};

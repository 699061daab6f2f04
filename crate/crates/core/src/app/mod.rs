//! Command-line surface and the edge-map sketch search application.

mod cli;
mod config;
mod index;

pub use cli::{
    main_with_args, run, Cli, Command, ConfigArgs, EmbedConfig, EvalConfig, QueryConfig,
    SynthConfig, VisualizeConfig,
};
pub use config::{apply_set, resolve};
pub use index::{contact_sheet, load_edge_map, load_records_by_id, QueryHit, QueryOutput, SketchIndex};

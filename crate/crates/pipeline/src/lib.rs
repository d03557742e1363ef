//! Progressive in-network parameter estimation: a chain of nodes, each routing the
//! measurement stream onwards while refining the link-offset estimate on the data
//! it has seen so far, ending in a server that filters the joint state in real time.

pub mod clock;
pub mod error;
pub mod node;
pub mod server;
pub mod topology;
pub mod transport;
pub mod wire;

pub use clock::{Epoch, Timing};
pub use error::{PipelineError, Result, WireError};
pub use node::{node_loop, FinalPolicy, NodePass, NodeReport, NodeSettings};
pub use server::{server_loop, ServerReport, ServerSettings, ServerStep, ThetaEvent};
pub use topology::{run_topology, ExperimentTrace, FeedRate, NodeConfig, Topology};
pub use transport::{channel_link, link, socket_link, DelayedInbound, Inbound, Outbound, TransportKind};
pub use wire::{read_frame, write_frame, Message};

//! TCP runtime around the fusion engine: a star-topology server that pings,
//! calibrates and fuses its clients, and a simulated depth-sensor client.

pub mod client;
pub mod server;

use mctl_core::protocol::{encode_message, Message, ProtocolError};
use thiserror::Error;
use tokio::io::{AsyncWrite, AsyncWriteExt};

pub use client::{run_sim_client, ClientSummary, SimClientConfig};
pub use server::{Server, ServerSummary};

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("protocol: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("handshake: {0}")]
    Handshake(String),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("{0}")]
    Config(String),
}

pub(crate) async fn send<W: AsyncWrite + Unpin>(w: &mut W, m: &Message) -> Result<(), NetError> {
    w.write_all(&encode_message(m)?).await?;
    Ok(())
}

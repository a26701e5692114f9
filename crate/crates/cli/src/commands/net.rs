use std::io::Write;
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use portvm_core::attestation::{KeyTrust, NodeIdentity, VerificationPolicy};
use portvm_core::migration::{migrate, MigrationOutcome, MigrationServer, NodeContext, ServedOutcome, TcpConnector};
use portvm_core::snapshot::{decode_bytes, Codec};
use portvm_core::vm::{instantiate, restore, CheckpointPolicy, Fuel};

use super::vm::{advance, finish, KeyArgs};
use crate::error::CliError;
use crate::inputs;

#[derive(Args, Debug)]
pub struct NodeArgs {
    /// Trusted peer measurements, one per line; defaults to this binary's own.
    #[arg(long, value_name = "FILE")]
    pub whitelist: Option<PathBuf>,
    /// Capabilities this node attests to, comma separated.
    #[arg(long, default_value = "")]
    pub caps: String,
    /// Capabilities the peer must attest to.
    #[arg(long, default_value = "")]
    pub require: String,
    /// Derive the node's signing key from a seed instead of generating one.
    #[arg(long, conflicts_with = "identity")]
    pub identity_seed: Option<u64>,
    /// Node signing key as hex.
    #[arg(long)]
    pub identity: Option<String>,
    /// Quote freshness window in seconds.
    #[arg(long)]
    pub window: Option<u64>,
}

impl NodeArgs {
    fn context(&self) -> Result<NodeContext, CliError> {
        let identity = match (&self.identity, self.identity_seed) {
            (Some(h), _) => NodeIdentity::from_secret_hex(h).map_err(|e| CliError::Usage(format!("bad identity: {e}")))?,
            (None, Some(s)) => NodeIdentity::from_seed(s),
            (None, None) => NodeIdentity::generate(),
        };
        let mut policy = VerificationPolicy::new(inputs::load_whitelist(self.whitelist.as_deref())?)
            .require(inputs::parse_caps(&self.require)?)
            .with_keys(KeyTrust::Any);
        if let Some(w) = self.window {
            policy = policy.with_window(w);
        }
        let own = inputs::self_measurement()?;
        Ok(NodeContext::new(Arc::new(identity), own, policy).with_entry_ids(inputs::parse_caps(&self.caps)?))
    }
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7410")]
    pub listen: String,
    #[command(flatten)]
    pub node: NodeArgs,
    /// Exit after the first migrated instance has run.
    #[arg(long)]
    pub once: bool,
    #[arg(long)]
    pub fuel: Option<u64>,
}

#[derive(Args, Debug)]
pub struct MigrateArgs {
    /// Destination address.
    #[arg(long)]
    pub to: String,
    #[arg(long)]
    pub module: PathBuf,
    /// Start from a snapshot file.
    #[arg(long, required_unless_present = "live", conflicts_with = "live")]
    pub snapshot: Option<PathBuf>,
    /// Start the module here and move it once it reaches a stable point.
    #[arg(long)]
    pub live: bool,
    /// With --live, stable points to pass before moving.
    #[arg(long, default_value_t = 1)]
    pub stops: usize,
    #[arg(long, default_value = "loop")]
    pub policy: CheckpointPolicy,
    #[arg(long, default_value = "deflate")]
    pub codec: Codec,
    #[command(flatten)]
    pub key: KeyArgs,
    #[command(flatten)]
    pub node: NodeArgs,
    /// Print the outcome as JSON.
    #[arg(long)]
    pub json: bool,
}

pub fn serve(a: ServeArgs) -> Result<(), CliError> {
    let ctx = a.node.context()?;
    let listener = TcpListener::bind(&a.listen).map_err(|e| CliError::io(&a.listen, e))?;
    let addr = listener.local_addr().map_err(|e| CliError::io(&a.listen, e))?;
    println!("listening on {addr} as {}", ctx.identity.node_id().short());
    std::io::stdout().flush().ok();
    let server = MigrationServer::new(ctx);
    let budget = a.fuel.map_or(Fuel::Unlimited, Fuel::Limited);
    for conn in listener.incoming() {
        let stream = conn.map_err(|e| CliError::io(addr.to_string(), e))?;
        let _ = stream.set_nodelay(true);
        let peer = stream.peer_addr().ok();
        match server.serve(Box::new(stream)) {
            Ok(ServedOutcome::Committed { id, .. }) => {
                let Some(mut inst) = server.take_instance(&id) else { continue };
                let result = finish(&mut inst, budget);
                match &result {
                    Ok(v) => println!("migration {}: {v}", hex::encode(id)),
                    Err(e) => log::error!("migration {} failed after resume: {e}", hex::encode(id)),
                }
                std::io::stdout().flush().ok();
                if a.once {
                    return result.map(|_| ());
                }
            }
            Ok(ServedOutcome::StatusAnswered { id, committed }) => {
                log::info!("status query for {}: committed={committed}", hex::encode(id));
            }
            Err(e) => log::warn!("session from {peer:?} failed: {e}"),
        }
    }
    Ok(())
}

pub fn migrate_cmd(a: MigrateArgs) -> Result<(), CliError> {
    let ctx = a.node.context()?.with_codec(a.codec);
    let module = inputs::load_module(&a.module)?;
    let mut inst = match &a.snapshot {
        Some(path) => {
            let key = inputs::snapshot_key(a.key.key.as_deref(), a.key.key_file.as_deref())?;
            let state = decode_bytes(&inputs::read(path)?, &key)?;
            restore(&module, &state, a.policy)?
        }
        None => {
            let mut inst = instantiate(&module, a.policy);
            advance(&mut inst, a.stops)?;
            inst
        }
    };
    let connector = TcpConnector::new(a.to.as_str()).map_err(|e| CliError::io(&a.to, e))?;
    let outcome = migrate(&mut inst, &connector, &ctx)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&outcome).map_err(|e| CliError::Internal(e.to_string()))?);
    } else {
        print!("{}", render_outcome(&outcome));
    }
    Ok(())
}

pub fn render_outcome(o: &MigrationOutcome) -> String {
    let st = &o.report.stages;
    let mut s = format!(
        "migration {} to {}\n",
        hex::encode(o.migration_id),
        o.peer.node_id.short()
    );
    s += &format!("{:<12} {:>12}\n", "stage", "ms");
    for (name, d) in [
        ("checkpoint", st.checkpoint),
        ("handshake", st.handshake),
        ("compress", st.compress),
        ("transfer", st.transfer),
        ("restore-ack", st.restore_ack),
        ("total", st.total),
    ] {
        s += &format!("{name:<12} {:>12.3}\n", d.as_secs_f64() * 1e3);
    }
    s += &format!(
        "snapshot {} bytes ({} plaintext, {:.2}x), {} chunks{}\n",
        o.blob_len,
        o.plaintext_len,
        o.compression_ratio,
        o.report.chunks_sent,
        if o.recovered { ", outcome recovered by status query" } else { "" }
    );
    s
}

//! Command-line surface.
//!
//! Exit codes: 0 success, 1 protocol or operation failure, 2 usage or
//! configuration error, 3 transport failure.

use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use oais_core::archive::{
    AipId, Archive, ChangeKind, CiId, Datastream, FragmentId, MediaType, SetSpec, Sip,
};
use oais_core::gateway::{Gateway, GatewayError};
use oais_core::harvest::{
    Chooser, HarvestError, Harvester, OaiClient, OpenUrlAgent, RetryPolicy, Transport,
};
use oais_core::packaging::{AnyFormat, DipParseError, parse_dip};
use oais_core::{ConfigError, GatewayConfig};

use crate::http::UreqTransport;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROTOCOL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "oais-gateway",
    version,
    about = "OAIS archive gateway: OAI-PMH and OpenURL access"
)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Network timeout in seconds for client commands.
    #[arg(long, default_value_t = 30, global = true)]
    timeout: u64,

    /// Retries after transport failures, with exponential backoff from 1s.
    #[arg(long, default_value_t = 3, global = true)]
    retries: u32,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve both interfaces over HTTP.
    Serve {
        /// Config file; falls back to $OAIS_GATEWAY_CONFIG, then defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the configured listen address.
        #[arg(long)]
        listen: Option<std::net::SocketAddr>,
    },
    /// Ingest a SIP into the store named by the config.
    Ingest {
        /// Config file; falls back to $OAIS_GATEWAY_CONFIG, then defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Content Information identifier (absolute URI).
        #[arg(long)]
        ci: String,
        /// PATH[:FRAGID[:MIMETYPE]]; fragment ids default to ds1, ds2, ...
        #[arg(long = "file", required = true)]
        files: Vec<String>,
        /// The new AIP is a Version of this AIP.
        #[arg(long, conflicts_with = "edition_of")]
        version_of: Option<String>,
        /// The new AIP is an Edition of this AIP.
        #[arg(long)]
        edition_of: Option<String>,
        /// Free-text change note recorded with the AIP.
        #[arg(long, default_value = "")]
        note: String,
        /// Set spec the AIP belongs to; repeatable.
        #[arg(long = "set")]
        sets: Vec<String>,
    },
    /// Incrementally mirror a repository through OAI-PMH.
    Harvest {
        /// OAI-PMH base URL, e.g. http://host:8080/oai
        #[arg(long)]
        base_url: String,
        /// metadataPrefix to harvest.
        #[arg(long)]
        prefix: String,
        /// Mirror directory; created if missing.
        #[arg(long)]
        mirror: PathBuf,
        /// Restrict the harvest to one set.
        #[arg(long)]
        set: Option<String>,
        /// Run one increment and exit.
        #[arg(long)]
        once: bool,
        /// Seconds between increments when not running once.
        #[arg(long, default_value_t = 3600)]
        interval: u64,
    },
    /// Fetch one DIP through OAI-PMH GetRecord and unpack it.
    Order {
        /// OAI-PMH base URL.
        #[arg(long)]
        base_url: String,
        /// Content Information identifier.
        #[arg(long)]
        id: String,
        /// metadataPrefix of the DIP format.
        #[arg(long)]
        format: String,
        /// Output directory for entry.xml and the datastreams.
        #[arg(long)]
        out: PathBuf,
    },
    /// Walk the OpenURL handshake (level 1: DIP, level 2: disseminations).
    Resolve {
        /// OpenURL resolver base URL, e.g. http://host:8080/openurl
        #[arg(long)]
        base_url: String,
        /// Content Information identifier.
        #[arg(long)]
        id: String,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        level: u8,
        /// latest, first or aip:ID
        #[arg(long, default_value = "latest")]
        choose: Chooser,
        /// Level 2: substring of the service URIs to fetch.
        #[arg(long, default_value = "")]
        svc: String,
        /// Level 1: DIP format URI; defaults to the native format.
        #[arg(long)]
        format: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// List the DIP formats a repository offers.
    Formats {
        /// OAI-PMH base URL.
        #[arg(long)]
        base_url: String,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Archive(#[from] oais_core::ArchiveError),
    #[error(transparent)]
    Harvest(#[from] HarvestError),
    #[error(transparent)]
    Dip(#[from] DipParseError),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_)
            | CliError::Config(_)
            | CliError::Gateway(GatewayError::Config(_)) => EXIT_USAGE,
            CliError::Harvest(e) if e.is_transport() => EXIT_TRANSPORT,
            _ => EXIT_PROTOCOL,
        }
    }
}

fn io_context(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    let _ = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(io::stderr)
        .try_init();
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
        }
    };
    init_logging(cli.verbose);
    let net = Net {
        transport: Arc::new(UreqTransport::new(Duration::from_secs(cli.timeout))),
        retry: RetryPolicy {
            retries: cli.retries,
            ..RetryPolicy::default()
        },
    };
    match execute(cli.command, &net) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

struct Net {
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
}

impl Net {
    fn oai(&self, base_url: String) -> OaiClient {
        OaiClient::new(Arc::clone(&self.transport), base_url).with_retry(self.retry)
    }

    fn openurl(&self, base_url: String) -> OpenUrlAgent {
        OpenUrlAgent::new(Arc::clone(&self.transport), base_url).with_retry(self.retry)
    }
}

fn execute(command: Command, net: &Net) -> Result<(), CliError> {
    match command {
        Command::Serve { config, listen } => serve(config.as_deref(), listen),
        Command::Ingest {
            config,
            ci,
            files,
            version_of,
            edition_of,
            note,
            sets,
        } => ingest(
            config.as_deref(),
            &ci,
            &files,
            version_of,
            edition_of,
            note,
            &sets,
        ),
        Command::Harvest {
            base_url,
            prefix,
            mirror,
            set,
            once,
            interval,
        } => {
            let set = set
                .map(SetSpec::new)
                .transpose()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let client = net.oai(base_url);
            let mut harvester = Harvester::open(client, &mirror, &prefix, set)?;
            loop {
                let report = harvester.harvest_increment(chrono::Utc::now())?;
                println!(
                    "{} records ({} written, {} quarantined)",
                    report.records(),
                    report.written,
                    report.quarantined.len()
                );
                for q in &report.quarantined {
                    eprintln!(
                        "quarantined {}: {} ({})",
                        q.identifier,
                        q.reason,
                        q.path.display()
                    );
                }
                if once {
                    return Ok(());
                }
                std::thread::sleep(Duration::from_secs(interval));
            }
        }
        Command::Order {
            base_url,
            id,
            format,
            out,
        } => {
            let entry = net.oai(base_url).order_dip(&id, &format)?;
            entry
                .write_to(&out)
                .map_err(io_context(out.display().to_string()))?;
            println!(
                "{} from {} ({} datastreams) -> {}",
                entry.ci_id,
                entry.source_aip,
                entry.datastreams.len(),
                out.display()
            );
            Ok(())
        }
        Command::Resolve {
            base_url,
            id,
            level,
            choose,
            svc,
            format,
            out,
        } => {
            let agent = net.openurl(base_url);
            fs::create_dir_all(&out).map_err(io_context(out.display().to_string()))?;
            if level == 1 {
                let dip = agent.order_dip(&id, &choose, format.as_deref())?;
                let written = write_level1(&dip.xml, &out)?;
                println!(
                    "{} from {} ({written} datastreams) -> {}",
                    dip.ci_id,
                    dip.source_aip,
                    out.display()
                );
            } else {
                let streams = agent.disseminate(&id, &choose, &svc)?;
                let mut used = std::collections::HashSet::new();
                for (k, s) in streams.iter().enumerate() {
                    let mut name = s.fragment_id.replace(['/', '\\'], "_");
                    if name.is_empty() || !used.insert(name.clone()) {
                        name = format!("{name}.{k}");
                        used.insert(name.clone());
                    }
                    let path = out.join(&name);
                    fs::write(&path, &s.bytes).map_err(io_context(path.display().to_string()))?;
                    println!(
                        "{name}\t{}\t{}\t{} bytes",
                        s.service,
                        s.media_type,
                        s.bytes.len()
                    );
                }
                println!("{} disseminations -> {}", streams.len(), out.display());
            }
            Ok(())
        }
        Command::Formats { base_url } => {
            for f in net.oai(base_url).discover_formats()? {
                println!("{}\t{}\t{}", f.prefix, f.namespace, f.schema);
            }
            Ok(())
        }
    }
}

/// Writes `dip.xml` and the inline datastreams under `ds/`.
fn write_level1(xml: &[u8], out: &Path) -> Result<usize, CliError> {
    let path = out.join("dip.xml");
    fs::write(&path, xml).map_err(io_context(path.display().to_string()))?;
    let parsed = parse_dip(xml, &AnyFormat)?;
    let ds_dir = out.join("ds");
    let mut written = 0;
    for ds in parsed.datastreams().unwrap_or_default() {
        fs::create_dir_all(&ds_dir).map_err(io_context(ds_dir.display().to_string()))?;
        let path = ds_dir.join(ds.fragment_id.as_str());
        fs::write(&path, &ds.content).map_err(io_context(path.display().to_string()))?;
        written += 1;
    }
    Ok(written)
}

fn serve(config: Option<&Path>, listen: Option<std::net::SocketAddr>) -> Result<(), CliError> {
    let mut config = GatewayConfig::load_or_default(config)?;
    if let Some(listen) = listen {
        config.listen = listen;
    }
    let runtime = tokio::runtime::Runtime::new().map_err(io_context("starting runtime"))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(config.listen)
            .await
            .map_err(io_context(format!("binding {}", config.listen)))?;
        let addr = listener
            .local_addr()
            .map_err(io_context("reading local address"))?;
        if config.public_url.is_none() {
            config.listen = addr;
        }
        let gateway = Arc::new(Gateway::open(config)?);
        println!("listening on http://{addr}");
        tracing::info!(%addr, "serving");
        crate::server::serve(gateway, listener, crate::server::shutdown_signal())
            .await
            .map_err(io_context("serving"))
    })
}

/// Guesses a media type from the file extension.
fn media_type_for(path: &Path) -> &'static str {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "pdf" => "application/pdf",
        "xml" => "application/xml",
        "json" => "application/json",
        "txt" => "text/plain",
        "html" | "htm" => "text/html",
        "jpg" | "jpeg" => "image/jpeg",
        "png" => "image/png",
        "gif" => "image/gif",
        "tif" | "tiff" => "image/tiff",
        "mp3" => "audio/mpeg",
        "wav" => "audio/wav",
        "mp4" => "video/mp4",
        _ => "application/octet-stream",
    }
}

/// Splits `PATH[:FRAGID[:MIMETYPE]]`.
fn file_spec(spec: &str, index: usize) -> Result<Datastream, CliError> {
    let mut parts = spec.splitn(3, ':');
    let path = PathBuf::from(parts.next().unwrap_or_default());
    let frag = parts
        .next()
        .filter(|f| !f.is_empty())
        .map(str::to_owned)
        .unwrap_or_else(|| format!("ds{}", index + 1));
    let mime = parts
        .next()
        .map(str::to_owned)
        .unwrap_or_else(|| media_type_for(&path).to_owned());
    let usage =
        |e: oais_core::archive::IdentifierError| CliError::Usage(format!("--file {spec}: {e}"));
    let fragment_id = FragmentId::new(frag).map_err(usage)?;
    let media_type = MediaType::new(mime).map_err(usage)?;
    let content = fs::read(&path).map_err(io_context(path.display().to_string()))?;
    Ok(Datastream::new(fragment_id, media_type, content))
}

fn ingest(
    config: Option<&Path>,
    ci: &str,
    files: &[String],
    version_of: Option<String>,
    edition_of: Option<String>,
    note: String,
    sets: &[String],
) -> Result<(), CliError> {
    let config = GatewayConfig::load_or_default(config)?;
    let usage = |e: oais_core::archive::IdentifierError| CliError::Usage(e.to_string());
    let ci = CiId::new(ci).map_err(usage)?;
    let mut sip = match (version_of, edition_of) {
        (Some(src), _) => Sip::derived(
            ChangeKind::Version,
            ci,
            AipId::new(src).map_err(usage)?,
            note,
        ),
        (None, Some(src)) => Sip::derived(
            ChangeKind::Edition,
            ci,
            AipId::new(src).map_err(usage)?,
            note,
        ),
        (None, None) => Sip::original(ci).with_note(note),
    };
    for (i, spec) in files.iter().enumerate() {
        sip = sip.with_datastream(file_spec(spec, i)?);
    }
    for set in sets {
        sip = sip.with_set(SetSpec::new(set.as_str()).map_err(usage)?);
    }
    let archive = Archive::open(&config.store_dir, &config.instance_name)?;
    let aip = archive.ingest(sip, chrono::Utc::now())?;
    println!("{}", aip.aip_id());
    Ok(())
}

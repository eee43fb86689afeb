use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use lean3d::bitstream::{parse_frames, FramePacket, METADATA_LEN};
use lean3d::codec::{decode_frame, encode_frame_report, CodecConfig, StageTimings};
use lean3d::entropy::vectors::{write_vectors, CDF_VECTOR_FILE, RANS_VECTOR_FILE};
use lean3d::geometry::{load_points, quantize, save_points, PointCloud, PointFormat, Reconstruction};
use lean3d::hierarchy::{build_pyramid, default_depth, select_split_depth};
use lean3d::predictor::{fit_table, LogitTableModel};
use lean3d::streamsim::{self, simulate as run_sim, summarize, TraceRecord};
use lean3d::Error;

use crate::CodecArgs;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_INTEGRITY: u8 = 3;
pub const EXIT_LOSSY: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            kind: "usage",
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            kind: "io",
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Parameter(_) | Error::Usage(_) => (EXIT_USAGE, "usage"),
            Error::Input(_) => (EXIT_IO, "input"),
            Error::Format { .. } | Error::Truncated { .. } => (EXIT_IO, "format"),
            Error::Io(_) => (EXIT_IO, "io"),
            Error::Integrity(_) | Error::CorruptStream(_) | Error::Invariant(_) => {
                (EXIT_INTEGRITY, "integrity")
            }
        };
        Self {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::io(e.to_string())
    }
}

fn with_path(path: &Path) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

/// One JSON object per failure on stderr.
pub fn report(f: &Failure) {
    let line = serde_json::json!({
        "error": f.kind,
        "exit_code": f.code,
        "message": f.message,
    });
    eprintln!("{line}");
}

type CmdResult = Result<(), Failure>;

fn config(args: &CodecArgs) -> Result<CodecConfig, Failure> {
    let cfg = CodecConfig {
        pos_q: args.pos_q,
        split_threshold: args.threshold,
        split_override: args.split,
        depth_override: args.depth,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(path: Option<&Path>) -> Result<LogitTableModel, Failure> {
    match path {
        Some(p) => LogitTableModel::load(p).map_err(with_path(p)),
        None => Ok(LogitTableModel::uniform()),
    }
}

fn point_format(path: &Path) -> Result<PointFormat, Failure> {
    PointFormat::from_path(path).ok_or_else(|| {
        Failure::usage(format!(
            "{}: unknown point format (use .bin or .ply)",
            path.display()
        ))
    })
}

fn read_points(path: &Path) -> Result<PointCloud, Failure> {
    load_points(path, point_format(path)?).map_err(with_path(path))
}

/// Point files in `dir`, sorted by name.
fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && PointFormat::from_path(p).is_some())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::io(format!(
            "{}: no .bin or .ply frames",
            dir.display()
        )));
    }
    Ok(files)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

pub fn fit(input: &Path, pos_q: u32, depth: Option<usize>, out: &Path) -> CmdResult {
    if pos_q == 0 {
        return Err(Failure::usage("posQ must be positive"));
    }
    let files = list_frames(input)?;
    let corpus = files
        .par_iter()
        .map(|p| {
            let q = quantize(&read_points(p)?, pos_q as f64).map_err(with_path(p))?;
            if q.is_empty() {
                return Ok(None);
            }
            let l = depth.unwrap_or_else(|| default_depth(&q.voxels));
            let pyr = build_pyramid(&q.voxels, l).map_err(with_path(p))?;
            // Every level contributes, so any later split depth finds its contexts.
            let levels = pyr.depth();
            Ok(Some((pyr, levels)))
        })
        .collect::<Result<Vec<_>, Failure>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    let model = fit_table(&corpus)?;
    model.save(out).map_err(with_path(out))?;
    println!(
        "fitted {} contexts from {} frames -> {}",
        model.len(),
        corpus.len(),
        out.display()
    );
    Ok(())
}

pub fn encode(input: &Path, model: Option<&Path>, args: &CodecArgs, out: &Path) -> CmdResult {
    let cfg = config(args)?;
    let model = load_model(model)?;
    let cloud = read_points(input)?;
    let enc = encode_frame_report(&cloud, &cfg, &model).map_err(with_path(input))?;
    fs::write(out, &enc.bytes).map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    println!(
        "{}: {} points, {} voxels, L={} D_s={}, {} bytes ({:.3} bpp) -> {}",
        input.display(),
        cloud.len(),
        enc.n_voxels,
        enc.depth,
        enc.split_depth,
        enc.bytes.len(),
        8.0 * enc.bytes.len() as f64 / enc.n_voxels as f64,
        out.display()
    );
    Ok(())
}

pub fn decode(input: &Path, model: Option<&Path>, out: &Path, center: bool) -> CmdResult {
    let format = point_format(out)?;
    let model = load_model(model)?;
    let bytes = fs::read(input).map_err(|e| Failure::io(format!("{}: {e}", input.display())))?;
    let dec = decode_frame(&bytes, &model).map_err(with_path(input))?;
    let mode = if center {
        Reconstruction::Center
    } else {
        Reconstruction::Corner
    };
    let points = dec.points(mode)?;
    save_points(out, &points, format).map_err(with_path(out))?;
    println!(
        "{}: {} voxels -> {}",
        input.display(),
        dec.cloud.len(),
        out.display()
    );
    Ok(())
}

/// Byte split of a packet: fixed header and stream table, metadata plus
/// base stream, shallow streams, deep streams.
fn byte_split(p: &FramePacket) -> [usize; 4] {
    let lens = p.stream_lengths();
    [
        p.header_len(),
        METADATA_LEN + lens[1],
        p.shallow_bytes(),
        p.deep_bytes(),
    ]
}

struct RoundtripRow {
    name: String,
    points: usize,
    voxels: usize,
    bytes: usize,
    split: [usize; 4],
    lossless: bool,
    error: Option<Failure>,
}

pub fn roundtrip(input: &Path, model: Option<&Path>, args: &CodecArgs) -> CmdResult {
    let cfg = config(args)?;
    let model = load_model(model)?;
    let files = list_frames(input)?;
    let rows: Vec<RoundtripRow> = files
        .par_iter()
        .map(|p| -> Result<RoundtripRow, Failure> {
            let cloud = read_points(p)?;
            let mut row = RoundtripRow {
                name: file_name(p),
                points: cloud.len(),
                voxels: 0,
                bytes: 0,
                split: [0; 4],
                lossless: false,
                error: None,
            };
            let enc = encode_frame_report(&cloud, &cfg, &model).map_err(with_path(p))?;
            let expect = quantize(&cloud, cfg.pos_q as f64)?;
            row.voxels = expect.len();
            row.bytes = enc.bytes.len();
            row.split = byte_split(&parse_frames(&enc.bytes)?[0]);
            match decode_frame(&enc.bytes, &model) {
                Ok(dec) => row.lossless = dec.cloud == expect,
                Err(e) => row.error = Some(e.into()),
            }
            Ok(row)
        })
        .collect::<Result<_, _>>()?;

    let mut out = io::stdout().lock();
    writeln!(
        out,
        "{:<24} {:>9} {:>9} {:>10} {:>7} {:>9} {:>9} {:>10} {:>8}  status",
        "frame", "points", "voxels", "bytes", "header", "base", "shallow", "deep", "bpp"
    )?;
    let mut failed = 0;
    for r in &rows {
        let status = match (&r.error, r.lossless) {
            (Some(e), _) => format!("FAIL ({})", e.message),
            (None, true) => "ok".to_string(),
            (None, false) => "FAIL (voxel set differs)".to_string(),
        };
        if status != "ok" {
            failed += 1;
        }
        writeln!(
            out,
            "{:<24} {:>9} {:>9} {:>10} {:>7} {:>9} {:>9} {:>10} {:>8.3}  {status}",
            r.name,
            r.points,
            r.voxels,
            r.bytes,
            r.split[0],
            r.split[1],
            r.split[2],
            r.split[3],
            8.0 * r.bytes as f64 / r.voxels.max(1) as f64,
        )?;
    }
    let total: usize = rows.iter().map(|r| r.bytes).sum();
    let voxels: usize = rows.iter().map(|r| r.voxels).sum();
    writeln!(
        out,
        "{} frames, {} bytes, {:.3} bpp, {failed} failed",
        rows.len(),
        total,
        8.0 * total as f64 / voxels.max(1) as f64
    )?;
    if failed > 0 {
        return Err(Failure {
            code: EXIT_LOSSY,
            kind: "lossless",
            message: format!("{failed} of {} frames did not round-trip", rows.len()),
        });
    }
    Ok(())
}

pub fn stats(input: &Path) -> CmdResult {
    let bytes = fs::read(input).map_err(|e| Failure::io(format!("{}: {e}", input.display())))?;
    let packets = parse_frames(&bytes).map_err(with_path(input))?;
    let mut out = io::stdout().lock();
    for (f, p) in packets.iter().enumerate() {
        let m = &p.metadata;
        let total: usize = p.header_len() + p.stream_lengths().iter().sum::<usize>();
        writeln!(out, "frame {f}")?;
        writeln!(out, "  posQ          {}", p.pos_q)?;
        writeln!(out, "  voxels        {}", p.n_points)?;
        writeln!(out, "  depth L       {}", m.depths)?;
        writeln!(out, "  split D_s     {}", m.shallow_d)?;
        writeln!(
            out,
            "  fixed point   inv_step={} b={} kmax={}",
            m.fp_inv_step, m.fp_b, m.fp_kmax
        )?;
        writeln!(
            out,
            "  n_streams     {} (2 + 2*{} shallow + {} deep)",
            p.n_streams(),
            p.shallow.len(),
            p.deep.len()
        )?;
        writeln!(out, "  header        {} bytes", p.header_len())?;
        writeln!(out, "  {:>6}  {:<10} {:>5} {:>10}  detail", "stream", "kind", "level", "bytes")?;
        let lens = p.stream_lengths();
        writeln!(out, "  {:>6}  {:<10} {:>5} {:>10}", 0, "metadata", "-", lens[0])?;
        writeln!(
            out,
            "  {:>6}  {:<10} {:>5} {:>10}  {} nodes",
            1,
            "base",
            0,
            lens[1],
            p.base.coords.len()
        )?;
        let mut i = 2;
        for (k, _) in p.shallow.iter().enumerate() {
            for half in ["s0", "s1"] {
                writeln!(
                    out,
                    "  {:>6}  {:<10} {:>5} {:>10}",
                    i,
                    format!("shallow.{half}"),
                    k + 1,
                    lens[i]
                )?;
                i += 1;
            }
        }
        for (k, d) in p.deep.iter().enumerate() {
            writeln!(
                out,
                "  {:>6}  {:<10} {:>5} {:>10}  Nu={} Msplit={} Llow={}",
                i,
                "deep",
                m.shallow_d as usize + k,
                lens[i],
                d.nu,
                d.msplit,
                d.low_width
            )?;
            i += 1;
        }
        writeln!(
            out,
            "  total         {} bytes, {:.3} bits per point",
            total,
            8.0 * total as f64 / (p.n_points.max(1)) as f64
        )?;
    }
    Ok(())
}

pub fn split_depth(input: &Path, pos_q: u32, depth: Option<usize>, threshold: f64) -> CmdResult {
    if pos_q == 0 {
        return Err(Failure::usage("posQ must be positive"));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Failure::usage("threshold must lie in (0, 1)"));
    }
    let q = quantize(&read_points(input)?, pos_q as f64)?;
    if q.is_empty() {
        return Err(Failure::usage(format!("{}: no points", input.display())));
    }
    let l = depth.unwrap_or_else(|| default_depth(&q.voxels));
    let pyr = build_pyramid(&q.voxels, l)?;
    let split = select_split_depth(&pyr, threshold);
    let mut out = io::stdout().lock();
    writeln!(out, "{:>5} {:>10} {:>10} {:>9}", "level", "nodes", "unary", "fraction")?;
    for (d, level) in pyr.levels.iter().enumerate() {
        let unary = level.occ.iter().filter(|o| o.count_ones() == 1).count();
        let mark = if d == split { "  <- D_s" } else { "" };
        writeln!(
            out,
            "{:>5} {:>10} {:>10} {:>9.4}{mark}",
            d,
            level.len(),
            unary,
            unary as f64 / level.len() as f64
        )?;
    }
    writeln!(out, "voxels {}  L {}  threshold {threshold}", q.len(), l)?;
    if split == 0 {
        writeln!(out, "D_s 0 (coded as 1: level 0 always ships raw)")?;
    } else {
        writeln!(out, "D_s {split}")?;
    }
    Ok(())
}

pub enum TraceSource {
    Csv(PathBuf),
    Capture {
        dir: PathBuf,
        model: Option<PathBuf>,
        codec: CodecArgs,
    },
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

/// Codes every frame once, timing encode and decode wall clock.
fn capture_trace(dir: &Path, model: Option<&Path>, args: &CodecArgs) -> Result<Vec<TraceRecord>, Failure> {
    let cfg = config(args)?;
    let model = load_model(model)?;
    let mut trace = Vec::new();
    for p in list_frames(dir)? {
        let cloud = read_points(&p)?;
        let start = Instant::now();
        let enc = encode_frame_report(&cloud, &cfg, &model).map_err(with_path(&p))?;
        let t_enc = start.elapsed();
        let start = Instant::now();
        decode_frame(&enc.bytes, &model).map_err(with_path(&p))?;
        let t_dec = start.elapsed();
        trace.push(TraceRecord::new(ms(t_enc), enc.bytes.len() as u64, ms(t_dec)));
    }
    Ok(trace)
}

pub fn simulate(
    source: TraceSource,
    bandwidths_mbps: &[f64],
    period_ms: f64,
    out: &Path,
    frames_out: Option<&Path>,
    trace_out: Option<&Path>,
) -> CmdResult {
    if bandwidths_mbps.is_empty() {
        return Err(Failure::usage("give --bandwidth-mbps or --grid"));
    }
    let trace = match &source {
        TraceSource::Csv(p) => streamsim::load_trace(p).map_err(with_path(p))?,
        TraceSource::Capture { dir, model, codec } => capture_trace(dir, model.as_deref(), codec)?,
    };
    if let Some(p) = trace_out {
        streamsim::write_trace(create(p)?, &trace)?;
    }
    let results = bandwidths_mbps
        .par_iter()
        .map(|&b| run_sim(&trace, b * 1e6, period_ms))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<_> = results.iter().map(summarize).collect();
    streamsim::write_summary(create(out)?, &rows)?;
    if let Some(p) = frames_out {
        streamsim::write_frames(create(p)?, &results[0])?;
    }

    let mut o = io::stdout().lock();
    writeln!(
        o,
        "{:>12} {:>7} {:>12} {:>12} {:>12} {:>10} {:>10}  backlog",
        "MB/s", "frames", "mean_ms", "median_ms", "p95_ms", "fps", "slope"
    )?;
    for (b, r) in bandwidths_mbps.iter().zip(&rows) {
        writeln!(
            o,
            "{:>12.3} {:>7} {:>12.3} {:>12.3} {:>12.3} {:>10.3} {:>10.3}  {}",
            b,
            r.frames,
            r.mean_latency_ms,
            r.median_latency_ms,
            r.p95_latency_ms,
            r.throughput_fps,
            r.backlog_slope_ms_per_frame,
            if r.backlog { "yes" } else { "no" }
        )?;
    }
    Ok(())
}

pub fn vectors(out: &Path, random: usize, rans: usize) -> CmdResult {
    write_vectors(out, random, rans).map_err(with_path(out))?;
    println!(
        "wrote {} and {} to {}",
        CDF_VECTOR_FILE,
        RANS_VECTOR_FILE,
        out.display()
    );
    Ok(())
}

pub fn bench(input: &Path, model: Option<&Path>, args: &CodecArgs, repeat: usize) -> CmdResult {
    let cfg = config(args)?;
    let model = load_model(model)?;
    let files = list_frames(input)?;
    let clouds = files
        .iter()
        .map(|p| read_points(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut enc_t = StageTimings::default();
    let mut dec_t = StageTimings::default();
    let mut bytes = 0usize;
    let mut voxels = 0usize;
    for _ in 0..repeat.max(1) {
        for (cloud, p) in clouds.iter().zip(&files) {
            let enc = encode_frame_report(cloud, &cfg, &model).map_err(with_path(p))?;
            let dec = decode_frame(&enc.bytes, &model).map_err(with_path(p))?;
            enc_t.accumulate(&enc.timings);
            dec_t.accumulate(&dec.timings);
            bytes += enc.bytes.len();
            voxels += enc.n_voxels;
        }
    }
    let runs = (repeat.max(1) * clouds.len()) as f64;
    let mut o = io::stdout().lock();
    writeln!(
        o,
        "{} frames x {} runs, {:.3} bpp",
        clouds.len(),
        repeat.max(1),
        8.0 * bytes as f64 / voxels.max(1) as f64
    )?;
    writeln!(o, "{:<26} {:>12} {:>7} {:>12} {:>7}", "stage", "enc ms/frame", "enc %", "dec ms/frame", "dec %")?;
    let stages: [(&str, fn(&StageTimings) -> Duration); 7] = [
        ("quantize", |t| t.quantize),
        ("pyramid build (BPA)", |t| t.bpa),
        ("coordinate gen (BCE)", |t| t.bce),
        ("shallow prediction", |t| t.shallow_predict),
        ("shallow entropy (rANS)", |t| t.shallow_entropy),
        ("deep compression", |t| t.deep),
        ("serialize / parse", |t| t.serialize),
    ];
    let (et, dt) = (ms(enc_t.total()), ms(dec_t.total()));
    let pct = |x: f64, total: f64| if total > 0.0 { 100.0 * x / total } else { 0.0 };
    for (name, get) in stages {
        let (e, d) = (ms(get(&enc_t)), ms(get(&dec_t)));
        writeln!(
            o,
            "{:<26} {:>12.3} {:>6.1}% {:>12.3} {:>6.1}%",
            name,
            e / runs,
            pct(e, et),
            d / runs,
            pct(d, dt)
        )?;
    }
    writeln!(o, "{:<26} {:>12.3} {:>7} {:>12.3}", "total", et / runs, "", dt / runs)?;
    Ok(())
}

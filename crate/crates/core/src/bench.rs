//! Strategy benchmark: im2col vs dense Winograd vs column-sparse Winograd.
//!
//! Every timed configuration is validated for output equivalence against an
//! independent implementation *before* any clock starts, and every multiply
//! count in a report row is read from instrumented kernels rather than
//! computed on the side. Timing is median-of-reps on a monotonic clock with
//! discarded warmup runs; the element-wise stage — where the sparse win
//! lives — can also be timed in isolation.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::layer::{ew_stage_into, op_counts, CompactLayer, WinogradLayer};
use crate::pruning::{build_mask, sparsity_to_kept};
use crate::refconv::{im2col_conv3d_counted, random_problem, ConvProblem};
use crate::rng::Rng;
use crate::tensor::{Matrix, Tensor};

/// How many unrecorded runs precede the measured ones.
const WARMUP_RUNS: usize = 3;
/// Fewest measured runs for a defensible median.
const MIN_REPS: usize = 11;
/// Winograd-vs-im2col agreement bound, relative to the output's max
/// magnitude. Both paths accumulate at f32 here; the transforms themselves
/// are exact, so disagreement beyond this indicates a broken kernel.
const EQUIV_REL_TOL: f64 = 1e-4;
/// Sparse-vs-masked-dense bound: the two compute identical sums with the
/// dead terms removed, so they match to roundoff.
const SPARSE_REL_TOL: f64 = 1e-12;

// ── strategies ──────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Strategy {
    Im2col,
    Winograd,
    Sparse,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Im2col => "im2col",
            Strategy::Winograd => "winograd",
            Strategy::Sparse => "sparse",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "im2col" => Ok(Strategy::Im2col),
            "winograd" => Ok(Strategy::Winograd),
            "sparse" => Ok(Strategy::Sparse),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected im2col, winograd, or sparse)"
            ))),
        }
    }
}

// ── cases and rows ──────────────────────────────────────────────────────────

/// One benchmarkable configuration: a seeded random problem plus its
/// Winograd forms. The mask keeps the top-l columns of |G_W| column sums —
/// timing is insensitive to *which* columns survive, but the choice is
/// deterministic and mirrors how a magnitude-pruned layer would look.
pub struct BenchCase {
    pub label: String,
    pub problem: ConvProblem<f32>,
    pub sparsity: f64,
    /// Dense layer (all columns, rank 0).
    pub dense: WinogradLayer<f32>,
    /// Same weights with the sparsity mask installed (oracle for sparse).
    pub masked: WinogradLayer<f32>,
    pub compact: CompactLayer<f32>,
}

impl BenchCase {
    pub fn new(
        label: &str,
        seed: u64,
        c_in: usize,
        c_out: usize,
        dims: [usize; 3],
        pad: usize,
        sparsity: f64,
    ) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let problem = random_problem::<f32>(&mut rng, c_in, c_out, dims, 3, pad);
        let dense = WinogradLayer::from_spatial(&problem.kernel, pad)?;
        let kept = sparsity_to_kept(sparsity, dense.spec.t3())?;
        let col_mags: Vec<f64> = (0..dense.g_w.cols())
            .map(|j| {
                (0..dense.g_w.rows())
                    .map(|u| dense.g_w.get(u, j).abs() as f64)
                    .sum()
            })
            .collect();
        let (mask, _) = build_mask(&col_mags, kept)?;
        let mut masked = dense.clone();
        masked.set_mask(mask)?;
        let compact = CompactLayer::from_layer(&masked)?;
        Ok(BenchCase {
            label: label.to_string(),
            problem,
            sparsity,
            dense,
            masked,
            compact,
        })
    }

    fn spatial_dims(&self) -> [usize; 3] {
        let d = self.problem.input.dims();
        [d[1], d[2], d[3]]
    }
}

/// One CSV row. `ns_median` times the whole forward; counters come from the
/// instrumented kernels of the run being reported.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub strategy: Strategy,
    pub layer: String,
    pub c_in: usize,
    pub c_out: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub sparsity: f64,
    pub l: usize,
    pub ew_mults: u64,
    pub total_mults: u64,
    pub ns_median: u64,
    pub reps: usize,
    pub threads: usize,
}

// ── timing internals ────────────────────────────────────────────────────────

/// Median-of-reps wall time of `f` in nanoseconds (middle element of the
/// sorted samples; upper middle for even reps), after discarded warmups.
fn median_ns<F: FnMut()>(mut f: F, reps: usize) -> u64 {
    for _ in 0..WARMUP_RUNS {
        f();
    }
    let mut ns: Vec<u64> = (0..reps)
        .map(|_| {
            let t0 = Instant::now();
            f();
            t0.elapsed().as_nanos() as u64
        })
        .collect();
    ns.sort_unstable();
    ns[reps / 2]
}

fn max_rel_err(got: &Tensor<f32>, want: &Tensor<f32>) -> Result<f64> {
    if got.dims() != want.dims() {
        return Err(Error::Validation(format!(
            "output dims {:?} vs {:?}",
            got.dims(),
            want.dims()
        )));
    }
    let scale = (want.max_abs() as f64).max(1e-30);
    Ok(got
        .data()
        .iter()
        .zip(want.data())
        .map(|(a, b)| ((a - b).abs() as f64) / scale)
        .fold(0.0, f64::max))
}

fn check_equiv(
    what: &str,
    got: &Tensor<f32>,
    want: &Tensor<f32>,
    tol: f64,
) -> Result<()> {
    let err = max_rel_err(got, want)?;
    if err > tol {
        return Err(Error::Validation(format!(
            "{what}: max relative error {err:.3e} exceeds {tol:.0e}; refusing to time"
        )));
    }
    Ok(())
}

// ── the harness ─────────────────────────────────────────────────────────────

/// Validate then time one strategy on one case.
///
/// Before any timing: the Winograd forward must match im2col within
/// `1e-4` relative, the sparse forward must match the masked dense forward
/// to roundoff, and (at sparsity 0 only, where a spatial counterpart exists)
/// the sparse forward must also match im2col. Element-wise multiply counts
/// are read from the instrumented kernels and cross-checked against the
/// closed-form prediction; a mismatch is an error, not a footnote.
pub fn bench_layer(
    strategy: Strategy,
    case: &BenchCase,
    reps: usize,
    threads: usize,
) -> Result<BenchRow> {
    if reps < MIN_REPS {
        return Err(Error::Config(format!(
            "reps {reps} below the minimum {MIN_REPS}"
        )));
    }
    if threads == 0 {
        return Err(Error::Config("thread count must be positive".into()));
    }
    let input = &case.problem.input;
    let (reference, im2col_mults) = im2col_conv3d_counted(&case.problem)?;
    let (wino_out, wino_counts) = case.dense.forward_dense_threaded(input, threads)?;
    check_equiv("winograd vs im2col", &wino_out, &reference, EQUIV_REL_TOL)?;

    let [sd, sh, sw] = case.spatial_dims();
    let spec = case.dense.spec;
    let geom = crate::transform::TileGeometry::new(
        spec,
        case.problem.pad,
        case.dense.c_in,
        [sd, sh, sw],
    )?;
    let tiles = geom.tile_count();

    let (ew_mults, total_mults, ns_median) = match strategy {
        Strategy::Im2col => {
            // no Winograd element-wise stage exists on this path
            let ns = median_ns(
                || {
                    let out = im2col_conv3d_counted(&case.problem).unwrap();
                    std::hint::black_box(&out);
                },
                reps,
            );
            (0, im2col_mults, ns)
        }
        Strategy::Winograd => {
            let predicted = op_counts(spec, tiles, case.dense.c_in, case.dense.c_out, spec.t3());
            if wino_counts.ew_mults != predicted.ew_mults {
                return Err(Error::Validation(format!(
                    "dense ew counter {} != prediction {}",
                    wino_counts.ew_mults, predicted.ew_mults
                )));
            }
            let ns = median_ns(
                || {
                    let out = case.dense.forward_dense_threaded(input, threads).unwrap();
                    std::hint::black_box(&out);
                },
                reps,
            );
            (wino_counts.ew_mults, wino_counts.total(), ns)
        }
        Strategy::Sparse => {
            let (sparse_out, sparse_counts) = case.compact.forward_threaded(input, threads)?;
            let (masked_out, _) = case.masked.forward_lowrank(input)?;
            check_equiv(
                "sparse vs masked dense",
                &sparse_out,
                &masked_out,
                SPARSE_REL_TOL,
            )?;
            if case.sparsity == 0.0 {
                check_equiv("sparse vs im2col", &sparse_out, &reference, EQUIV_REL_TOL)?;
            }
            let predicted =
                op_counts(spec, tiles, case.compact.c_in, case.compact.c_out, case.compact.l());
            if sparse_counts.ew_mults != predicted.ew_mults {
                return Err(Error::Validation(format!(
                    "sparse ew counter {} != prediction {}",
                    sparse_counts.ew_mults, predicted.ew_mults
                )));
            }
            let ns = median_ns(
                || {
                    let out = case.compact.forward_threaded(input, threads).unwrap();
                    std::hint::black_box(&out);
                },
                reps,
            );
            (sparse_counts.ew_mults, sparse_counts.total(), ns)
        }
    };

    Ok(BenchRow {
        strategy,
        layer: case.label.clone(),
        c_in: case.dense.c_in,
        c_out: case.dense.c_out,
        d: sd,
        h: sh,
        w: sw,
        sparsity: case.sparsity,
        l: case.compact.l(),
        ew_mults,
        total_mults,
        ns_median,
        reps,
        threads,
    })
}

/// Median latency and exact multiply count of the element-wise stage alone.
/// For the sparse strategy the per-forward column gather `V̄ = V(:, 𝒫)` is
/// timed inside the region — it is a real per-inference cost of the sparse
/// layout. The input transform runs once outside the clock (identical for
/// every sparsity, so it cancels out of any comparison), and the V̄/U
/// buffers are preallocated and reused across reps the way a steady-state
/// inference loop would hold them — otherwise page-fault noise from fresh
/// multi-megabyte allocations drowns the quantity being measured.
pub fn elementwise_latency(
    strategy: Strategy,
    case: &BenchCase,
    reps: usize,
    threads: usize,
) -> Result<(u64, u64)> {
    if reps < MIN_REPS {
        return Err(Error::Config(format!(
            "reps {reps} below the minimum {MIN_REPS}"
        )));
    }
    let cache = case.dense.transform_input(&case.problem.input)?;
    let tiles = cache.geom.tile_count();
    let (c_in, c_out) = (case.dense.c_in, case.dense.c_out);
    match strategy {
        Strategy::Winograd => {
            let g = &case.dense.g_w;
            let mut u = Matrix::zeros(tiles * c_out, g.cols());
            let mults = ew_stage_into(g, &cache.v, c_in, c_out, tiles, threads, &mut u);
            let ns = median_ns(
                || {
                    ew_stage_into(g, &cache.v, c_in, c_out, tiles, threads, &mut u);
                    std::hint::black_box(&u);
                },
                reps,
            );
            Ok((ns, mults))
        }
        Strategy::Sparse => {
            // lane-padded layout, exactly what CompactLayer::forward runs
            let g = case.compact.lane_weights();
            let locations = &case.compact.locations;
            let mut v_lanes = Matrix::zeros(cache.v.rows(), g.cols());
            let mut u = Matrix::zeros(tiles * c_out, g.cols());
            cache.v.gather_cols_into_padded(locations, &mut v_lanes)?;
            ew_stage_into(g, &v_lanes, c_in, c_out, tiles, threads, &mut u);
            let mults = (tiles * c_in * c_out * locations.len()) as u64;
            let ns = median_ns(
                || {
                    cache.v.gather_cols_into_padded(locations, &mut v_lanes).unwrap();
                    ew_stage_into(g, &v_lanes, c_in, c_out, tiles, threads, &mut u);
                    std::hint::black_box(&u);
                },
                reps,
            );
            Ok((ns, mults))
        }
        Strategy::Im2col => Err(Error::Config(
            "im2col has no Winograd element-wise stage".into(),
        )),
    }
}

// ── reporting ───────────────────────────────────────────────────────────────

/// Render rows as CSV, ordered by (layer, strategy, sparsity). The header is
/// stable — downstream plots key on these column names.
pub fn bench_report(rows: &[BenchRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Data("no benchmark rows to report".into()));
    }
    let mut sorted: Vec<&BenchRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.layer, a.strategy, a.sparsity)
            .partial_cmp(&(&b.layer, b.strategy, b.sparsity))
            .unwrap()
    });
    let mut out = String::from(
        "strategy,layer,Ci,Co,D,H,W,sparsity,l,ew_mults,total_mults,ns_median,reps,threads\n",
    );
    for r in sorted {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.strategy.name(),
            r.layer,
            r.c_in,
            r.c_out,
            r.d,
            r.h,
            r.w,
            r.sparsity,
            r.l,
            r.ew_mults,
            r.total_mults,
            r.ns_median,
            r.reps,
            r.threads
        ));
    }
    Ok(out)
}

/// Parse a report produced by [`bench_report`] (round-trip testing and
/// downstream tooling).
pub fn parse_report(csv: &str) -> Result<Vec<BenchRow>> {
    let mut lines = csv.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty report".into()))?;
    if header
        != "strategy,layer,Ci,Co,D,H,W,sparsity,l,ew_mults,total_mults,ns_median,reps,threads"
    {
        return Err(Error::Format(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 14 {
            return Err(Error::Format(format!(
                "line {}: {} fields, expected 14",
                n + 2,
                f.len()
            )));
        }
        let parse_err = |what: &str| Error::Format(format!("line {}: bad {what}", n + 2));
        rows.push(BenchRow {
            strategy: f[0].parse()?,
            layer: f[1].to_string(),
            c_in: f[2].parse().map_err(|_| parse_err("Ci"))?,
            c_out: f[3].parse().map_err(|_| parse_err("Co"))?,
            d: f[4].parse().map_err(|_| parse_err("D"))?,
            h: f[5].parse().map_err(|_| parse_err("H"))?,
            w: f[6].parse().map_err(|_| parse_err("W"))?,
            sparsity: f[7].parse().map_err(|_| parse_err("sparsity"))?,
            l: f[8].parse().map_err(|_| parse_err("l"))?,
            ew_mults: f[9].parse().map_err(|_| parse_err("ew_mults"))?,
            total_mults: f[10].parse().map_err(|_| parse_err("total_mults"))?,
            ns_median: f[11].parse().map_err(|_| parse_err("ns_median"))?,
            reps: f[12].parse().map_err(|_| parse_err("reps"))?,
            threads: f[13].parse().map_err(|_| parse_err("threads"))?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Format("report has a header but no rows".into()));
    }
    Ok(rows)
}

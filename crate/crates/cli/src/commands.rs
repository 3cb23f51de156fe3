use std::fs;
use std::path::{Path, PathBuf};

use a2sf_core::experiment::ideal_reference;
use a2sf_core::oracle::kept_mass;
use a2sf_core::trace_io::{
    fmt_sig6, parse_heavy_hitters, read_trace, render_report_csv, render_summary_csv,
    write_mask_dump, write_trace, BudgetSpec, ExperimentConfig, KvConfig, LiveSource, PolicySpec,
    TraceSource,
};
use a2sf_core::{
    evaluate_replay_masks, generate_synthetic_trace, policy_mask, replay_with_mask, run_full,
    workload_tokens, AttentionTrace, DecoderConfig, EvalMode, Evaluation, LiveBaseline, PolicyKind,
    SimilarityReport, ToyDecoder, TraceGenConfig,
};
use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use crate::args::{CompareArgs, GenArgs, IdealArgs, Mode, OnOff, RunArgs, SourceArgs, SweepArgs};

/// What a command produced; mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    AssertionFailed,
}

#[derive(Debug, Clone, Copy)]
pub struct Ctx {
    pub verbose: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub fn gen(ctx: Ctx, args: &GenArgs) -> Result<Outcome> {
    let mut cfg = match &args.config {
        Some(p) => TraceGenConfig::from_kv(&KvConfig::load(p)?, "gen.")?,
        None => TraceGenConfig::default(),
    };
    if let Some(v) = args.len {
        cfg.seq_len = v;
    }
    if let Some(v) = args.layers {
        cfg.n_layers = v;
    }
    if let Some(v) = args.heads {
        cfg.n_heads = v;
    }
    if let Some(v) = args.sink {
        cfg.sink_strength = v;
    }
    if let Some(v) = args.locality {
        cfg.locality_strength = v;
    }
    if let Some(v) = args.locality_window {
        cfg.locality_window = v;
    }
    if let Some(h) = &args.hitters {
        cfg.heavy_hitters = parse_heavy_hitters(h)?;
    }
    if let Some(v) = args.temp {
        cfg.noise_temperature = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    ctx.note(format!("generating {}", cfg.describe()));
    let trace = generate_synthetic_trace(&cfg)?;
    let sum = write_trace(&trace, &args.out)?;
    println!(
        "wrote {}: layers={} heads={} seq_len={} checksum={sum:016x}",
        args.out.display(),
        trace.n_layers(),
        trace.n_heads(),
        trace.seq_len()
    );
    Ok(Outcome::Success)
}

/// Experiment settings after merging a config file with flags.
struct Setup {
    source: TraceSource,
    policies: Vec<PolicySpec>,
    budget: Option<BudgetSpec>,
    mode: EvalMode,
    renormalize: bool,
    out: Option<PathBuf>,
    dump_masks: Option<PathBuf>,
    seed: u64,
}

fn setup(args: &SourceArgs) -> Result<Setup> {
    let base = args
        .config
        .as_ref()
        .map(ExperimentConfig::load)
        .transpose()?;
    let seed = args.seed.or(base.as_ref().map(|c| c.seed)).unwrap_or(0);
    let live_flags = args.len.is_some()
        || args.layers.is_some()
        || args.heads.is_some()
        || args.d_head.is_some()
        || args.vocab.is_some()
        || args.decoder_seed.is_some();

    let source = if let Some(p) = &args.trace {
        if live_flags {
            bail!("decoder flags need --live, not --trace");
        }
        TraceSource::File(p.clone())
    } else {
        let from_cfg = base.as_ref().map(|c| c.source.clone());
        match (args.live, from_cfg) {
            (false, Some(src)) if !live_flags || matches!(src, TraceSource::Live(_)) => match src {
                TraceSource::Live(l) => TraceSource::Live(override_live(args, l, seed)),
                other => other,
            },
            (true, Some(TraceSource::Live(l))) => TraceSource::Live(override_live(args, l, seed)),
            (true, _) => TraceSource::Live(override_live(args, default_live(seed), seed)),
            (false, Some(_)) => bail!("decoder flags need --live"),
            (false, None) => bail!("no trace source: pass --trace, --live or --config"),
        }
    };

    let mode = match (args.mode, &base) {
        (Some(Mode::Replay), _) => EvalMode::Replay,
        (Some(Mode::Live), _) => EvalMode::Live,
        (None, Some(c)) if args.trace.is_none() && !args.live => c.mode,
        (None, _) => match source {
            TraceSource::Live(_) => EvalMode::Live,
            _ => EvalMode::Replay,
        },
    };
    if mode == EvalMode::Live && !matches!(source, TraceSource::Live(_)) {
        bail!("live mode needs a live decoder source (--live)");
    }

    let budget = match (args.cache_ratio, args.budget) {
        (Some(r), _) => Some(BudgetSpec::Ratio(r)),
        (None, Some(c)) => Some(BudgetSpec::Count(c)),
        (None, None) => base.as_ref().map(|c| c.budget),
    };

    Ok(Setup {
        source,
        policies: base
            .as_ref()
            .map(|c| c.policies.clone())
            .unwrap_or_default(),
        budget,
        mode,
        renormalize: match args.renormalize {
            Some(f) => f == OnOff::On,
            None => base.as_ref().is_none_or(|c| c.renormalize),
        },
        out: base.as_ref().and_then(|c| c.out.clone()),
        dump_masks: base.as_ref().and_then(|c| c.dump_masks.clone()),
        seed,
    })
}

fn default_live(seed: u64) -> LiveSource {
    LiveSource {
        decoder: DecoderConfig {
            n_layers: 4,
            n_heads: 4,
            d_head: 16,
            vocab_size: 64,
            seed,
        },
        seq_len: 128,
    }
}

fn override_live(args: &SourceArgs, mut l: LiveSource, seed: u64) -> LiveSource {
    let d = &mut l.decoder;
    d.n_layers = args.layers.unwrap_or(d.n_layers);
    d.n_heads = args.heads.unwrap_or(d.n_heads);
    d.d_head = args.d_head.unwrap_or(d.d_head);
    d.vocab_size = args.vocab.unwrap_or(d.vocab_size);
    d.seed = args
        .decoder_seed
        .unwrap_or(if args.seed.is_some() { seed } else { d.seed });
    l.seq_len = args.len.unwrap_or(l.seq_len);
    l
}

/// Loaded attention source.
enum Loaded {
    Trace(AttentionTrace),
    Live {
        decoder: ToyDecoder,
        tokens: Vec<usize>,
    },
}

fn load(ctx: Ctx, setup: &Setup) -> Result<Loaded> {
    Ok(match &setup.source {
        TraceSource::File(p) => {
            ctx.note(format!("reading {}", p.display()));
            Loaded::Trace(read_trace(p)?)
        }
        TraceSource::Generate(cfg) => {
            ctx.note(format!("generating {}", cfg.describe()));
            Loaded::Trace(generate_synthetic_trace(cfg)?)
        }
        TraceSource::Live(l) => {
            if l.seq_len < 2 {
                bail!("live sequence length must be >= 2");
            }
            let decoder = ToyDecoder::new(l.decoder)?;
            let tokens = workload_tokens(l.decoder.seed, l.seq_len, l.decoder.vocab_size);
            ctx.note(format!("toy decoder {:?}, {} tokens", l.decoder, l.seq_len));
            if setup.mode == EvalMode::Replay {
                let trace = run_full(&decoder, &tokens)?.trace("live full run")?;
                Loaded::Trace(trace)
            } else {
                Loaded::Live { decoder, tokens }
            }
        }
    })
}

/// Evaluates policies against the ideal mask in the configured mode.
enum Evaluator<'a> {
    Replay(&'a AttentionTrace),
    Live(Box<LiveBaseline<'a>>),
}

impl<'a> Evaluator<'a> {
    fn new(loaded: &'a Loaded) -> Result<Self> {
        Ok(match loaded {
            Loaded::Trace(t) => Evaluator::Replay(t),
            Loaded::Live { decoder, tokens } => {
                Evaluator::Live(Box::new(LiveBaseline::new(decoder, tokens)?))
            }
        })
    }

    fn trace(&self) -> &AttentionTrace {
        match self {
            Evaluator::Replay(t) => t,
            Evaluator::Live(b) => &b.trace,
        }
    }

    fn seq_len(&self) -> usize {
        self.trace().seq_len()
    }

    fn evaluate(
        &self,
        policy: PolicyKind,
        budget: usize,
        renorm: bool,
        seed: u64,
    ) -> Result<Evaluation> {
        Ok(match self {
            Evaluator::Replay(t) => evaluate_replay_masks(t, policy, budget, renorm, seed)?,
            Evaluator::Live(b) => b.evaluate_masks(policy, budget, renorm, seed)?,
        })
    }
}

fn require_budget(setup: &Setup) -> Result<BudgetSpec> {
    setup
        .budget
        .ok_or_else(|| anyhow!("no budget: pass --cache-ratio or --budget"))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{}", String::from_utf8_lossy(bytes));
            Ok(())
        }
    }
}

fn mask_prefix(policy: PolicyKind, budget: usize) -> String {
    format!("{}_B{budget}", policy.label().replace(':', "_"))
}

/// Builds a policy from `--policy/--alpha/--window`.
fn policy_from_flags(
    name: Option<&str>,
    alpha: Option<f64>,
    window: Option<usize>,
) -> Result<Option<PolicySpec>> {
    let Some(name) = name else {
        if alpha.is_some() || window.is_some() {
            bail!("--alpha/--window need --policy");
        }
        return Ok(None);
    };
    let check_alpha = |a: f64| -> Result<f64> {
        if (0.0..1.0).contains(&a) {
            Ok(a)
        } else {
            Err(a2sf_core::Error::BadAlpha(a).into())
        }
    };
    let mut spec = if name.trim().eq_ignore_ascii_case("a2sf") {
        let a = alpha.ok_or_else(|| anyhow!("policy a2sf needs --alpha"))?;
        PolicySpec::A2sf {
            alpha: check_alpha(a)?,
        }
    } else {
        name.parse()?
    };
    match (&mut spec, alpha) {
        (PolicySpec::A2sf { alpha: cur }, Some(a)) => *cur = check_alpha(a)?,
        (_, Some(a)) => eprintln!("warning: --alpha {a} ignored for policy {}", spec.name()),
        _ => {}
    }
    match (&mut spec, window) {
        (PolicySpec::Local { window: cur }, Some(w)) => {
            if w == 0 {
                return Err(a2sf_core::Error::BadWindow.into());
            }
            *cur = Some(w);
        }
        (_, Some(w)) => eprintln!("warning: --window {w} ignored for policy {}", spec.name()),
        _ => {}
    }
    Ok(Some(spec))
}

pub fn run(ctx: Ctx, args: &RunArgs) -> Result<Outcome> {
    let policy = policy_from_flags(args.policy.as_deref(), args.alpha, args.window)?;
    let setup = setup(&args.source)?;
    let specs = match policy {
        Some(p) => vec![p],
        None if !setup.policies.is_empty() => setup.policies.clone(),
        None => bail!("no policy: pass --policy or a config with policies"),
    };
    let budget_spec = require_budget(&setup)?;
    let loaded = load(ctx, &setup)?;
    let eval = Evaluator::new(&loaded)?;
    let budget = budget_spec.resolve(eval.seq_len())?;
    ctx.note(format!("budget {budget} of {} tokens", eval.seq_len()));

    let mut reports = Vec::new();
    let dump = args.dump_masks.clone().or(setup.dump_masks.clone());
    for spec in &specs {
        let policy = spec.resolve(budget)?;
        let ev = eval.evaluate(policy, budget, setup.renormalize, setup.seed)?;
        if let Some(dir) = &dump {
            write_mask_dump(&ev.mask, dir, &mask_prefix(policy, ev.report.budget))?;
            write_mask_dump(&ev.ideal, dir, &format!("ideal_B{}", ev.report.budget))?;
        }
        reports.push(ev.report);
    }
    let out = args.out.clone().or(setup.out.clone());
    emit(out.as_deref(), &render_report_csv(&reports)?)?;
    Ok(Outcome::Success)
}

/// Parses `start:stop:step` (inclusive) or a comma list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    if s.is_empty() {
        bail!("empty grid");
    }
    let parts: Vec<&str> = s.split(':').collect();
    let values = match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step): (f64, f64, f64) =
                (a.trim().parse()?, b.trim().parse()?, step.trim().parse()?);
            if step.is_nan() || step <= 0.0 || b < a {
                bail!("grid {s:?} is empty");
            }
            let n = ((b - a) / step + 1e-9).floor() as usize + 1;
            (0..n)
                .map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12)
                .collect()
        }
        [_] => s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| anyhow!("bad grid value {p:?}"))
            })
            .collect::<Result<Vec<_>>>()?,
        _ => bail!("grid {s:?} is neither start:stop:step nor a list"),
    };
    if values.is_empty() {
        bail!("empty grid");
    }
    Ok(values)
}

pub fn sweep(ctx: Ctx, args: &SweepArgs) -> Result<Outcome> {
    let alphas = parse_grid(&args.alphas)?;
    let ratios = parse_grid(&args.ratios)?;
    for &a in &alphas {
        PolicyKind::A2sf { alpha: a }.validate()?;
    }
    let setup = setup(&args.source)?;
    if args.source.cache_ratio.is_some() || args.source.budget.is_some() {
        bail!("sweep takes --ratios, not --cache-ratio/--budget");
    }
    let loaded = load(ctx, &setup)?;
    let eval = Evaluator::new(&loaded)?;
    let len = eval.seq_len();
    let points: Vec<(f64, f64)> = ratios
        .iter()
        .flat_map(|&r| alphas.iter().map(move |&a| (r, a)))
        .collect();
    ctx.note(format!("{} grid points", points.len()));
    let reports = points
        .par_iter()
        .map(|&(ratio, alpha)| {
            let budget = BudgetSpec::Ratio(ratio).resolve(len)?;
            let ev = eval.evaluate(
                PolicyKind::A2sf { alpha },
                budget,
                setup.renormalize,
                setup.seed,
            )?;
            Ok(ev.report)
        })
        .collect::<Result<Vec<SimilarityReport>>>()?;
    let out = args.out.clone().or(setup.out.clone());
    emit(out.as_deref(), &render_report_csv(&reports)?)?;
    Ok(Outcome::Success)
}

pub const DEFAULT_COMPARE: &str = "local,h2o,a2sf:0.1,a2sf:0.5";

pub fn compare(ctx: Ctx, args: &CompareArgs) -> Result<Outcome> {
    let setup = setup(&args.source)?;
    let specs = match &args.policies {
        Some(p) => PolicySpec::parse_list(p)?,
        None if !setup.policies.is_empty() => setup.policies.clone(),
        None => PolicySpec::parse_list(DEFAULT_COMPARE)?,
    };
    let order = args
        .assert_order
        .as_deref()
        .map(|o| parse_order(o, &specs))
        .transpose()?;
    let reference = if args.reference.trim().eq_ignore_ascii_case("ideal") {
        None
    } else {
        Some(args.reference.parse::<PolicySpec>()?)
    };
    let budget_spec = require_budget(&setup)?;
    let loaded = load(ctx, &setup)?;
    let eval = Evaluator::new(&loaded)?;
    let budget = budget_spec.resolve(eval.seq_len())?;

    let reports = match reference {
        None => specs
            .par_iter()
            .map(|s| {
                let p = s.resolve(budget)?;
                Ok(eval
                    .evaluate(p, budget, setup.renormalize, setup.seed)?
                    .report)
            })
            .collect::<Result<Vec<_>>>()?,
        Some(r) => {
            let Evaluator::Replay(trace) = &eval else {
                bail!("--reference other than ideal is replay-only");
            };
            compare_to_policy(
                trace,
                &specs,
                r.resolve(budget)?,
                budget,
                setup.renormalize,
                setup.seed,
            )?
        }
    };

    let out = args.out.clone().or(setup.out.clone());
    emit(out.as_deref(), &render_summary_csv(&reports)?)?;

    if let Some(order) = order {
        let cos: Vec<f64> = order.iter().map(|&i| reports[i].mean_cosine).collect();
        let held = cos.windows(2).all(|w| w[0] > w[1]);
        let desc: Vec<String> = order
            .iter()
            .zip(&cos)
            .map(|(&i, c)| format!("{}={}", reports[i].policy.label(), fmt_sig6(*c)))
            .collect();
        if held {
            eprintln!("order holds: {}", desc.join(" > "));
        } else {
            eprintln!("order violated: {}", desc.join(", "));
            return Ok(Outcome::AssertionFailed);
        }
    }
    Ok(Outcome::Success)
}

fn compare_to_policy(
    trace: &AttentionTrace,
    specs: &[PolicySpec],
    reference: PolicyKind,
    budget: usize,
    renorm: bool,
    seed: u64,
) -> Result<Vec<SimilarityReport>> {
    let ref_mask = policy_mask(trace, reference, budget)?;
    let ref_rows = replay_with_mask(trace, &ref_mask, renorm)?;
    specs
        .iter()
        .map(|s| {
            let p = s.resolve(budget)?;
            Ok(a2sf_core::experiment::evaluate_replay_against(
                trace, &ref_mask, &ref_rows, p, budget, renorm, seed,
            )?)
        })
        .collect()
}

/// Maps `a>b>c` onto indices of `specs`. `a2sf:0.1` matches exactly; a bare
/// name matches the first policy of that kind.
pub fn parse_order(order: &str, specs: &[PolicySpec]) -> Result<Vec<usize>> {
    let names: Vec<&str> = order.split('>').map(str::trim).collect();
    if names.len() < 2 || names.iter().any(|n| n.is_empty()) {
        bail!("--assert-order needs at least two policies, e.g. a2sf>h2o>local");
    }
    names
        .iter()
        .map(|n| {
            let pos = if n.contains(':') {
                let want: PolicySpec = n.parse()?;
                specs.iter().position(|s| *s == want)
            } else {
                let want: PolicySpec = match n.to_ascii_lowercase().as_str() {
                    "a2sf" => PolicySpec::A2sf { alpha: 0.0 },
                    _ => n.parse()?,
                };
                specs.iter().position(|s| s.name() == want.name())
            };
            pos.ok_or_else(|| anyhow!("policy {n:?} in --assert-order is not being compared"))
        })
        .collect()
}

pub fn ideal(ctx: Ctx, args: &IdealArgs) -> Result<Outcome> {
    let mut setup = setup(&args.source)?;
    // the ideal mask is defined on recorded rows
    setup.mode = EvalMode::Replay;
    let budget_spec = require_budget(&setup)?;
    let loaded = load(ctx, &setup)?;
    let Loaded::Trace(trace) = &loaded else {
        unreachable!("replay mode always yields a trace");
    };
    let budget = budget_spec.resolve(trace.seq_len())?;
    let (mask, _) = ideal_reference(trace, budget, setup.renormalize)?;
    if let Some(dir) = args.dump_masks.clone().or(setup.dump_masks.clone()) {
        write_mask_dump(&mask, dir, &format!("ideal_B{budget}"))?;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer", "head", "budget", "mean_kept_mass", "min_kept_mass"])?;
    let (mut total, mut units) = (0.0, 0usize);
    for (unit, (layer, head)) in trace.grid().iter().enumerate() {
        let masses: Vec<f64> = (0..trace.seq_len())
            .map(|q| kept_mass(trace.row(layer, head, q), mask.keep(unit, q)))
            .collect();
        let mean = masses.iter().sum::<f64>() / masses.len() as f64;
        let min = masses.iter().copied().fold(f64::INFINITY, f64::min);
        total += mean;
        units += 1;
        w.write_record([
            layer.to_string(),
            head.to_string(),
            budget.to_string(),
            fmt_sig6(mean),
            fmt_sig6(min),
        ])?;
    }
    w.write_record([
        "AVERAGE".into(),
        "AVERAGE".into(),
        budget.to_string(),
        fmt_sig6(total / units as f64),
        String::new(),
    ])?;
    let bytes = w.into_inner().map_err(|e| anyhow!("csv buffer: {e}"))?;
    emit(args.out.clone().or(setup.out.clone()).as_deref(), &bytes)?;
    Ok(Outcome::Success)
}

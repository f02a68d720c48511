use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use hbst::bench::compare;
use hbst::descriptor::{group_by_image, DescriptorEntry};
use hbst::eval::{build_ground_truth, max_f1, pr_curve, run_protocol, GroundTruth, GroundTruthParams};
use hbst::io::{
    load_poses, read_ground_truth, write_bitwise_completeness, write_depth_completeness, write_ground_truth,
    write_matches, write_pr_curve, write_scores, write_timing, DescriptorFile,
};
use hbst::oracle::{depth_completeness, BitwiseCompleteness, CompletenessCorpus};
use hbst::synthetic::{planted_queries, random_entries, revisit_loops, SyntheticSpec};
use hbst::{HbstError, HbstTree, Matcher, MatcherParams, MatcherRegistry, Result, RetrievalConfig, TreeConfig};

use crate::{BenchArgs, BuildMode, CompletenessArgs, GenArgs, MatchArgs, ProtocolArgs, TreeBuildArgs, TreeParams};

fn usage(msg: impl Into<String>) -> HbstError {
    HbstError::Usage(msg.into())
}

/// Input files that violate a precondition are bad data, not bad invocation.
fn as_data(e: HbstError) -> HbstError {
    match e {
        HbstError::Usage(msg) => HbstError::Format(msg),
        other => other,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn tree_config(p: &TreeParams) -> TreeConfig {
    TreeConfig {
        tau: p.tau,
        delta_max: p.delta_max,
        n_max: p.nmax,
        max_depth: p.max_depth,
    }
}

fn load(path: &Path) -> Result<DescriptorFile> {
    DescriptorFile::load(path).map_err(|e| match e {
        HbstError::Io(io) => HbstError::Io(io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn create_matcher(method: &str, dim_bits: u32, tree: &TreeParams) -> Result<Box<dyn Matcher>> {
    MatcherRegistry::with_builtins().create(method, &MatcherParams::with_tree(dim_bits, tree_config(tree)))
}

/// Inserts runs of equal image id one image at a time.
fn insert_all(matcher: &mut dyn Matcher, entries: &[DescriptorEntry]) -> Result<()> {
    for image in entries.chunk_by(|a, b| a.image_id == b.image_id) {
        matcher.insert_image(image)?;
    }
    Ok(())
}

pub fn gen(a: GenArgs) -> Result<()> {
    let loop_pairs = if a.no_loops {
        Vec::new()
    } else if a.loops.is_empty() {
        revisit_loops(a.num_images)
    } else {
        a.loops
    };
    if a.dim % 8 != 0 {
        return Err(usage(format!("--dim must be a multiple of 8, got {}", a.dim)));
    }
    let spec = SyntheticSpec {
        num_images: a.num_images,
        descriptors_per_image: a.per_image,
        dim_bits: a.dim,
        loop_pairs,
        noise_bits: a.noise,
        seed: a.seed,
    };
    let seq = spec.generate()?;
    let file = DescriptorFile::new(seq.dim_bits, seq.entries())?;
    file.save(&a.out)?;
    if let Some(path) = &a.truth {
        write_ground_truth(&seq.truth, create(path)?)?;
    }
    println!(
        "wrote {} descriptors in {} images ({} loop pairs) to {}",
        file.entries.len(),
        seq.images.len(),
        seq.truth.len(),
        a.out.display()
    );
    Ok(())
}

pub fn run_match(a: MatchArgs) -> Result<()> {
    let db = load(&a.db)?;
    let queries = load(&a.query)?;
    if db.dim_bits != queries.dim_bits {
        return Err(HbstError::Format(format!(
            "database has {}-bit descriptors but queries have {} bits",
            db.dim_bits, queries.dim_bits
        )));
    }
    let mut matcher = create_matcher(&a.method, db.dim_bits, &a.tree)?;
    insert_all(matcher.as_mut(), &db.entries)?;
    let mut matches = Vec::new();
    for q in &queries.entries {
        if let Some(m) = matcher.search_nearest(q, a.tree.tau)?.best {
            matches.push(m);
        }
    }
    match &a.out {
        Some(path) => write_matches(&matches, create(path)?)?,
        None => write_matches(&matches, io::stdout().lock())?,
    }
    if a.out.is_some() {
        println!("{} of {} queries matched", matches.len(), queries.entries.len());
    }
    Ok(())
}

pub fn protocol(a: ProtocolArgs) -> Result<()> {
    if a.eval && a.ground_truth.is_none() && !a.compute_gt {
        return Err(usage("--eval needs --ground-truth FILE or --compute-gt"));
    }
    let file = load(&a.input)?;
    let images = group_by_image(file.entries).map_err(as_data)?;
    let mut matcher = create_matcher(&a.method, file.dim_bits, &a.tree)?;
    let retrieval = RetrievalConfig {
        tau: a.tree.tau,
        tau_image: a.tau_image,
    };
    let run = run_protocol(&images, matcher.as_mut(), &retrieval).map_err(as_data)?;

    fs::create_dir_all(&a.out_dir)?;
    let timing: Vec<(u32, f64)> = run.images.iter().map(|r| (r.image_id, r.seconds)).collect();
    write_timing(&timing, create(&a.out_dir.join("timing.csv"))?)?;
    let ranked = run.ranked();
    write_scores(&ranked, create(&a.out_dir.join("scores.csv"))?)?;
    println!(
        "{}: {} images, mean {:.4}s per image",
        run.matcher,
        run.images.len(),
        run.mean_seconds()
    );

    let gt = if let Some(path) = &a.ground_truth {
        Some(GroundTruth::from_pairs(read_ground_truth(File::open(path)?)?).map_err(as_data)?)
    } else if a.compute_gt {
        let poses = a.poses.as_deref().map(load_poses).transpose()?;
        let params = GroundTruthParams {
            tau: a.tree.tau,
            ..GroundTruthParams::default()
        };
        let gt = build_ground_truth(&images, poses.as_deref(), &params).map_err(as_data)?;
        write_ground_truth(&gt.pairs, create(&a.out_dir.join("ground_truth.csv"))?)?;
        Some(gt)
    } else {
        None
    };
    if let (true, Some(gt)) = (a.eval, gt) {
        let curve = pr_curve(&ranked, &gt);
        write_pr_curve(&curve, create(&a.out_dir.join("pr.csv"))?)?;
        match max_f1(&curve) {
            Ok(p) => println!(
                "max F1 {:.4} at score threshold {:.4} (precision {:.4}, recall {:.4})",
                p.f1, p.threshold, p.precision, p.recall
            ),
            Err(_) => println!("max F1 undefined: ground truth is empty"),
        }
    }
    Ok(())
}

pub fn completeness(a: CompletenessArgs) -> Result<()> {
    let refs = load(&a.input)?;
    let queries = match &a.queries {
        Some(path) => {
            let q = load(path)?;
            if q.dim_bits != refs.dim_bits {
                return Err(HbstError::Format(format!(
                    "references have {}-bit descriptors but queries have {} bits",
                    refs.dim_bits, q.dim_bits
                )));
            }
            q.entries
        }
        None => {
            if a.noise_max > refs.dim_bits {
                return Err(usage(format!("--noise-max {} exceeds width {}", a.noise_max, refs.dim_bits)));
            }
            planted_queries(&refs.entries, a.noise_max, a.seed)
        }
    };
    if refs.entries.is_empty() {
        return Err(HbstError::Format(format!("{} holds no descriptors", a.input.display())));
    }
    let corpus = CompletenessCorpus::new(refs.entries, queries)?;
    let reports = depth_completeness(&corpus, &a.taus, &a.depths, a.delta_max)?;
    let bitwise = BitwiseCompleteness {
        taus: a.taus.clone(),
        per_bit: reports.iter().map(|r| r.per_bit.clone()).collect(),
    };

    fs::create_dir_all(&a.out_dir)?;
    write_bitwise_completeness(&bitwise, create(&a.out_dir.join("bitwise.csv"))?)?;
    write_depth_completeness(&reports, create(&a.out_dir.join("depth.csv"))?)?;
    for (t, r) in reports.iter().enumerate() {
        println!(
            "tau {:>3}: mean bitwise completeness {:.4}, stddev over bits {:.4}",
            r.tau,
            bitwise.mean(t),
            bitwise.stddev(t)
        );
    }
    Ok(())
}

pub fn tree_build(a: TreeBuildArgs) -> Result<()> {
    let file = load(&a.input)?;
    let config = tree_config(&a.tree);
    config.validate(file.dim_bits)?;
    let tree = match a.mode {
        BuildMode::Balanced => HbstTree::build_balanced(file.dim_bits, file.entries, &config)?,
        BuildMode::Incremental => {
            let mut tree = HbstTree::new(file.dim_bits);
            for e in file.entries {
                tree.insert(e, &config)?;
            }
            tree
        }
    };
    let mut out = create(&a.output)?;
    tree.write_to(&mut out)?;
    out.flush()?;
    let stats = tree.depth_stats();
    println!(
        "wrote tree with {} descriptors, {} leaves, mean leaf depth {:.2} to {}",
        tree.len(),
        stats.leaf_count,
        stats.mean_depth,
        a.output.display()
    );
    Ok(())
}

pub fn tree_info(input: &Path) -> Result<()> {
    let tree = HbstTree::deserialize(&fs::read(input)?)?;
    let stats = tree.depth_stats();
    let mut out = io::stdout().lock();
    writeln!(out, "descriptor width: {} bits", tree.dim_bits())?;
    writeln!(out, "descriptors:      {}", tree.len())?;
    writeln!(out, "leaves:           {}", stats.leaf_count)?;
    writeln!(out, "mean leaf depth:  {:.3}", stats.mean_depth)?;
    writeln!(out, "stddev depth:     {:.3}", stats.stddev_depth)?;
    writeln!(out, "max depth:        {}", stats.max_depth)?;
    writeln!(out, "leaf sizes (size: leaves):")?;
    for (size, count) in &stats.leaf_size_histogram {
        writeln!(out, "  {size}: {count}")?;
    }
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    if a.stored == 0 || a.queries == 0 {
        return Err(usage("--stored and --queries must be positive"));
    }
    if a.queries > a.stored {
        return Err(usage("--queries cannot exceed --stored"));
    }
    if a.noise > a.dim {
        return Err(usage(format!("--noise {} exceeds width {}", a.noise, a.dim)));
    }
    let config = tree_config(&a.tree);
    config.validate(a.dim)?;
    let stored = random_entries(a.stored, 1000, a.dim, a.seed);
    let queries = planted_queries(&stored[..a.queries], a.noise, a.seed.wrapping_add(1));
    let r = compare(&stored, &queries, &config)?;
    println!("stored descriptors:     {}", r.stored);
    println!("queries:                {}", r.queries);
    println!("mean depth traversed:   {:.2}", r.mean_depth_traversed);
    println!("mean leaf scanned:      {:.2}", r.mean_leaf_scanned);
    println!("mean tree work:         {:.2}", r.mean_tree_work);
    println!("brute-force work:       {:.0}", r.brute_force_work);
    println!("work ratio:             {:.6}", r.work_ratio());
    println!("tree time:              {:.6}s", r.tree_seconds);
    println!("brute-force time:       {:.6}s", r.brute_force_seconds);
    println!("wall-clock speedup:     {:.1}x", r.wall_clock_speedup());
    println!("agreement with oracle:  {:.4}", r.agreement);
    Ok(())
}

pub fn methods() -> Result<()> {
    for (name, description) in MatcherRegistry::with_builtins().describe() {
        println!("{name:<10} {description}");
    }
    Ok(())
}

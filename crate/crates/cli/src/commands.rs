//! The four pipeline stages: corpus synthesis, graph construction, training
//! and held-out evaluation. Every stage writes its declared outputs into the
//! output directory and echoes the effective configuration beside them.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use tieforge_core::corpus::{
    generate_synthetic, load_corpus, write_corpus_file, PlantedTies, VocabMode, NA_RELATION,
};
use tieforge_core::encoder::load_word_vectors;
use tieforge_core::eval::{
    collect_predictions, p_at_n, pr_curve, pr_curve_csv, project_embeddings, projection_tsv,
    ties_recovery_report,
};
use tieforge_core::graph::gcn_forward;
use tieforge_core::trainer::{load_checkpoint, save_checkpoint, train_from, ModelParams};
use tieforge_core::{RelationMap, TiesGraph};

use crate::config::RunConfig;
use crate::logging::{debug, info};

fn ensure_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output dir {}", out.display()))
}

pub fn cmd_synth(config: &RunConfig, out: &Path) -> Result<()> {
    ensure_out_dir(out)?;
    let generated = generate_synthetic(&config.synth).context("generating synthetic corpus")?;

    let train_path = config.train_corpus(out);
    let test_path = config.test_corpus(out);
    let relations_path = config.relations(out);
    let ties_path = config.ties(out);
    write_corpus_file(&generated.train, &generated.vocab, &generated.relations, &train_path)?;
    write_corpus_file(&generated.test, &generated.vocab, &generated.relations, &test_path)?;
    generated.relations.save(&relations_path)?;
    fs::write(&ties_path, generated.ties.to_tsv(&generated.relations))?;
    config.echo(out)?;

    let na_bags = generated
        .train
        .iter()
        .chain(&generated.test)
        .filter(|b| b.labels.contains(&NA_RELATION) && b.labels.len() == 1)
        .count();
    println!("train bags: {}", generated.train.len());
    println!("test bags: {}", generated.test.len());
    println!("na bags: {na_bags}");
    println!("vocab tokens: {}", generated.vocab.len());
    println!("relations: {}", generated.relations.len());
    info!("corpus written under {}", out.display());
    Ok(())
}

fn load_training_data(
    config: &RunConfig,
    out: &Path,
) -> Result<(Vec<tieforge_core::Bag>, tieforge_core::Vocabulary, RelationMap)> {
    let relations_path = config.relations(out);
    let relations = RelationMap::load(&relations_path)
        .with_context(|| format!("loading relation mapping {}", relations_path.display()))?;
    let train_path = config.train_corpus(out);
    let (bags, vocab) = load_corpus(
        &train_path,
        VocabMode::Build,
        &relations,
        config.train.max_pos_distance,
    )
    .with_context(|| format!("loading training corpus {}", train_path.display()))?;
    debug!(
        "loaded {} training bags, vocabulary of {} tokens",
        bags.len(),
        vocab.len()
    );
    Ok((bags, vocab, relations))
}

pub fn cmd_build_graph(config: &RunConfig, out: &Path) -> Result<()> {
    ensure_out_dir(out)?;
    let (bags, _, relations) = load_training_data(config, out)?;
    let mut graph = TiesGraph::build(&bags, relations.len(), config.train.theta)?;
    if config.train.renormalize_rows {
        graph.renormalize_rows();
    }

    let names = relations.names();
    fs::write(out.join("occurrence.tsv"), graph.occurrence_tsv(names))?;
    fs::write(out.join("cooccurrence.tsv"), graph.cooccurrence_tsv(names))?;
    fs::write(out.join("transition.tsv"), graph.transition_tsv(names))?;
    fs::write(out.join("exclusion.tsv"), graph.exclusion_tsv(names))?;
    config.echo(out)?;

    println!("co-occurrence edges: {}", graph.cooccurrence_edge_count());
    println!(
        "transition edges after threshold: {}",
        graph.transition_edge_count()
    );
    info!("graph matrices written under {}", out.display());
    Ok(())
}

pub fn cmd_train(config: &RunConfig, out: &Path) -> Result<()> {
    ensure_out_dir(out)?;
    let (bags, vocab, relations) = load_training_data(config, out)?;
    let mut graph = TiesGraph::build(&bags, relations.len(), config.train.theta)?;
    if config.train.renormalize_rows {
        graph.renormalize_rows();
    }

    let mut params = ModelParams::init_seeded(&config.train, vocab.len(), relations.len());
    if let Some(vectors) = &config.paths.word_vectors {
        let loaded = load_word_vectors(vectors, &vocab, &mut params.tables.word)
            .with_context(|| format!("loading word vectors {}", vectors.display()))?;
        info!("loaded {loaded} pretrained word vectors");
    }

    let outcome = train_from(params, &bags, &graph, &config.train, |epoch, loss| {
        info!("epoch {epoch}: mean loss {loss:.6}");
    })?;

    let checkpoint_path = config.checkpoint(out);
    save_checkpoint(&outcome.params, &config.train, &checkpoint_path)?;
    let mut trace = String::from("epoch,mean_loss\n");
    for (epoch, loss) in outcome.epoch_losses.iter().enumerate() {
        trace.push_str(&format!("{epoch},{loss}\n"));
    }
    fs::write(out.join("loss_trace.csv"), trace)?;
    config.echo(out)?;

    println!("epochs: {}", outcome.epoch_losses.len());
    if let Some(last) = outcome.epoch_losses.last() {
        println!("final mean loss: {last}");
    }
    println!("checkpoint: {}", checkpoint_path.display());
    Ok(())
}

pub fn cmd_eval(config: &RunConfig, out: &Path) -> Result<()> {
    ensure_out_dir(out)?;
    let relations_path = config.relations(out);
    let relations = RelationMap::load(&relations_path)
        .with_context(|| format!("loading relation mapping {}", relations_path.display()))?;

    let checkpoint_path = config.checkpoint(out);
    let checkpoint = load_checkpoint(&checkpoint_path)
        .with_context(|| format!("loading checkpoint {}", checkpoint_path.display()))?;
    checkpoint.ensure_relations(relations.len())?;

    // merge eval-time flag overrides onto the checkpointed configuration
    let mut eval_config = checkpoint.config.clone();
    eval_config.graph_enabled = config.train.graph_enabled && eval_config.graph_enabled;

    // the vocabulary is rebuilt from the training corpus, in file order, so
    // token ids line up with the checkpointed tables
    let train_path = config.train_corpus(out);
    let (train_bags, vocab) = load_corpus(
        &train_path,
        VocabMode::Build,
        &relations,
        eval_config.max_pos_distance,
    )
    .with_context(|| format!("loading training corpus {}", train_path.display()))?;
    if vocab.len() != checkpoint.vocab_size {
        bail!(
            "vocabulary from {} has {} tokens, checkpoint expects {}",
            train_path.display(),
            vocab.len(),
            checkpoint.vocab_size
        );
    }
    let test_path = config.test_corpus(out);
    let (test_bags, _) = load_corpus(
        &test_path,
        VocabMode::Reuse(&vocab),
        &relations,
        eval_config.max_pos_distance,
    )
    .with_context(|| format!("loading test corpus {}", test_path.display()))?;

    let mut graph = TiesGraph::build(&train_bags, relations.len(), eval_config.theta)?;
    if eval_config.renormalize_rows {
        graph.renormalize_rows();
    }

    let records = collect_predictions(&test_bags, &checkpoint.params, &graph, &eval_config)?;
    let curve = pr_curve(&records)?;
    fs::write(out.join("pr_curve.csv"), pr_curve_csv(&curve))?;
    println!("records: {}", records.len());
    println!("auc: {}", curve.auc);
    for n in [100usize, 200, 300] {
        let clamped = n.min(records.len());
        if clamped > 0 {
            println!("p@{n}: {}", p_at_n(&records, clamped)?);
        }
    }

    // relation embeddings as the classifier sees them
    let effective_graph = if eval_config.graph_enabled {
        graph.clone()
    } else {
        graph.clone().with_identity_transition()
    };
    let h = gcn_forward(&effective_graph, &checkpoint.params.gcn, eval_config.activation)?;

    let ties_path = config.ties(out);
    if ties_path.exists() {
        let ties = PlantedTies::parse_tsv(&fs::read_to_string(&ties_path)?, &relations)?;
        let report = ties_recovery_report(&h, &ties, &graph);
        fs::write(out.join("recovery_report.txt"), report.to_string())?;
        println!("recovery margin: {}", report.margin);
    } else {
        debug!("no ties file at {}, skipping recovery report", ties_path.display());
    }

    if config.eval.export_embeddings {
        let coords = project_embeddings(&h)?;
        fs::write(
            out.join("projection.tsv"),
            projection_tsv(relations.names(), &coords),
        )?;
        info!("projection written to {}", out.join("projection.tsv").display());
    }

    config.echo(out)?;
    Ok(())
}

use std::fs;
use std::path::{Path, PathBuf};

use perpscale::affinity::AffinityMode;
use perpscale::dataset::{draw_nested_samples, sample_size, MatrixFormat};
use perpscale::metrics::{knn_overlap, silhouette};
use perpscale::optimizer::run_tsne;
use perpscale::pipeline::{affinity_cost, budget_plan, explore_grid, sample_based_embed, Budget, GridSpec, PipelinePlan};
use perpscale::scaling::{mc_report, scale_perplexity, Rounding, ScalingRule};
use perpscale::synthetic::{gaussian_mixture, MixtureSpec};
use perpscale::{Dataset, Embedding};
use serde_json::json;

use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::svg::{self, Panel};
use crate::{Cli, Command, FormatArg, InputArgs, ModeArg};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Embed {
            input,
            perplexity,
            optimizer,
            svg,
        } => {
            let config = optimizer.config(cli.seed);
            let mut manifest = RunManifest::new(
                "embed",
                cli.seed,
                json!({ "perplexity": perplexity, "optimizer": config, "svg": svg }),
            );
            let dataset = load_input(cli, input, &mut manifest)?;
            let out = prepare_output(&cli.output_dir)?;
            let (embedding, trace) = manifest.time("tsne", || run_tsne(&dataset, *perplexity, &config, None))?;
            write(&out, "embedding.csv", &embedding.to_csv_string(dataset.labels()), &mut manifest)?;
            write(&out, "trace.csv", &trace.to_csv_string(), &mut manifest)?;
            if *svg {
                let title = format!("{}, perplexity {perplexity}", dataset.name());
                let doc = svg::scatter_document(&embedding, dataset.labels(), &title, cli.seed);
                write(&out, "embedding.svg", &doc, &mut manifest)?;
            }
            manifest.write(&out)
        }
        Command::Sample { input, rates } => {
            let mut manifest = RunManifest::new("sample", cli.seed, json!({ "rates": rates }));
            let dataset = load_input(cli, input, &mut manifest)?;
            let out = prepare_output(&cli.output_dir)?;
            let plan = draw_nested_samples(&dataset, rates, cli.seed)?;
            let format = match cli.format {
                Some(FormatArg::Bin) => MatrixFormat::Binary,
                _ => MatrixFormat::Csv,
            };
            let ext = if format == MatrixFormat::Binary { "bin" } else { "csv" };
            for (rate, level) in plan.rates.iter().zip(&plan.levels) {
                let name = format!("sample_{rate}.{ext}");
                dataset.subset(level)?.save(out.join(&name), format)?;
                manifest.outputs.push(name);
            }
            write(&out, "sample_plan.json", &serde_json::to_string_pretty(&plan)?, &mut manifest)?;
            manifest.write(&out)
        }
        Command::Mc {
            input,
            rates,
            repeats,
            perplexity,
        } => {
            let mut manifest = RunManifest::new(
                "mc",
                cli.seed,
                json!({ "rates": rates, "repeats": repeats, "perplexity": perplexity }),
            );
            let dataset = load_input(cli, input, &mut manifest)?;
            let out = prepare_output(&cli.output_dir)?;
            let report = manifest.time("monte_carlo", || mc_report(&dataset, rates, *repeats, *perplexity, cli.seed))?;
            write(&out, "mc_points.csv", &report.to_csv_string(), &mut manifest)?;
            write(&out, "mc_summary.json", &report.summary_json(), &mut manifest)?;
            write(&out, "mc.svg", &svg::mc_document(&report), &mut manifest)?;
            println!("{}", serde_json::to_string(&report.summary())?);
            manifest.write(&out)
        }
        Command::Grid {
            input,
            rates,
            perplexities,
            scale,
            max_bytes,
            bytes_per_entry,
            optimizer,
        } => {
            let config = optimizer.config(cli.seed);
            let mut manifest = RunManifest::new(
                "grid",
                cli.seed,
                json!({
                    "rates": rates, "perplexities": perplexities, "scale": scale,
                    "max_bytes": max_bytes, "bytes_per_entry": bytes_per_entry, "optimizer": config,
                }),
            );
            let dataset = load_input(cli, input, &mut manifest)?;
            let out = prepare_output(&cli.output_dir)?;
            let n = dataset.len();
            let mut sorted = perplexities.clone();
            sorted.sort_by(f64::total_cmp);
            let mode = config.affinity_mode();

            // cells[column][row]: the embedding, or None when infeasible.
            let mut columns: Vec<Vec<(f64, Option<Embedding>)>> = Vec::with_capacity(rates.len());
            let mut summary = Vec::new();
            let mut sample_labels: Vec<Option<Vec<i64>>> = Vec::with_capacity(rates.len());
            for &rate in rates {
                let m = sample_size(n, rate);
                let cell_perplexity = |p: f64| {
                    if *scale {
                        let rule = ScalingRule::new(p, n, Rounding::Nearest).ok()?;
                        scale_perplexity(&rule, m).ok()
                    } else {
                        Some(p)
                    }
                };
                let feasible = |p: f64| {
                    let fits = max_bytes.is_none_or(|limit| {
                        let budget = Budget {
                            max_bytes: limit,
                            bytes_per_entry: *bytes_per_entry,
                            mode,
                        };
                        affinity_cost(n, rate, p / rate, &budget) <= limit
                    });
                    p > 1.0 && p < m as f64 && fits
                };
                let planned: Vec<Option<f64>> = sorted.iter().map(|&p| cell_perplexity(p).filter(|&q| feasible(q))).collect();
                let runnable: Vec<f64> = planned.iter().flatten().copied().collect();
                let mut results = Vec::new();
                let mut labels = None;
                if !runnable.is_empty() {
                    let spec = GridSpec {
                        rate,
                        perplexities: runnable,
                        optimizer: config.clone(),
                        seed: cli.seed,
                    };
                    let grid = manifest.time(&format!("grid_rate_{rate}"), || explore_grid(&dataset, &spec))?;
                    labels = dataset.subset(&grid.sample_ids)?.labels().map(<[i64]>::to_vec);
                    results = grid.cells;
                }
                let mut cells = results.into_iter();
                let mut column = Vec::with_capacity(sorted.len());
                for (&requested, planned) in sorted.iter().zip(&planned) {
                    match planned {
                        Some(p) => {
                            let cell = cells.next().expect("one result per runnable perplexity");
                            let name = format!("grid_rate{rate}_per{p}.csv");
                            write(&out, &name, &cell.embedding.to_csv_string(labels.as_deref()), &mut manifest)?;
                            summary.push(json!({
                                "rate": rate, "requested": requested, "perplexity": p, "feasible": true,
                                "kl_initial": cell.trace.initial_cost, "kl_final": cell.trace.final_cost, "file": name,
                            }));
                            column.push((*p, Some(cell.embedding)));
                        }
                        None => {
                            summary.push(json!({ "rate": rate, "requested": requested, "feasible": false }));
                            column.push((cell_perplexity(requested).unwrap_or(requested), None));
                        }
                    }
                }
                columns.push(column);
                sample_labels.push(labels);
            }

            let row_titles: Vec<String> = sorted.iter().map(|p| format!("Per {p}")).collect();
            let column_titles: Vec<String> = rates.iter().map(|r| format!("rate {r}")).collect();
            let panels: Vec<Vec<Panel>> = (0..sorted.len())
                .map(|r| {
                    columns
                        .iter()
                        .zip(&sample_labels)
                        .map(|(column, labels)| {
                            let (p, embedding) = &column[r];
                            let title = format!("Per' = {p}");
                            match embedding {
                                Some(embedding) => Panel::Scatter {
                                    embedding,
                                    labels: labels.as_deref(),
                                    title,
                                },
                                None => Panel::Infeasible { title },
                            }
                        })
                        .collect()
                })
                .collect();
            let doc = svg::grid_document(&row_titles, &column_titles, &panels, cli.seed);
            write(&out, "grid.svg", &doc, &mut manifest)?;
            write(&out, "grid.json", &serde_json::to_string_pretty(&summary)?, &mut manifest)?;
            manifest.write(&out)
        }
        Command::Pipeline {
            input,
            rate,
            per_sample,
            per_target,
            per_full,
            prolong_k,
            optimizer,
            svg,
        } => {
            let config = optimizer.config(cli.seed);
            let mut manifest = RunManifest::new(
                "pipeline",
                cli.seed,
                json!({
                    "rate": rate, "per_sample": per_sample, "per_target": per_target, "per_full": per_full,
                    "prolong_k": prolong_k, "optimizer": config, "svg": svg,
                }),
            );
            let dataset = load_input(cli, input, &mut manifest)?;
            let out = prepare_output(&cli.output_dir)?;
            let n = dataset.len();
            let per_sample = match (per_sample, per_target) {
                (Some(p), _) => *p,
                (None, Some(target)) => {
                    let rule = ScalingRule::new(*target, n, Rounding::Nearest)?;
                    scale_perplexity(&rule, sample_size(n, *rate))?
                }
                (None, None) => return Err(CliError::Usage("--per-sample or --per-target is required".into())),
            };
            let plan = PipelinePlan {
                rate: *rate,
                per_sample,
                per_full: *per_full,
                prolong_k: *prolong_k,
                sample_optimizer: config.clone(),
                full_optimizer: config,
                seed: cli.seed,
            };
            let result = sample_based_embed(&dataset, &plan)?;
            for stage in &result.stages {
                manifest.stages.push(crate::manifest::StageTiming {
                    stage: stage.stage.clone(),
                    seconds: stage.seconds,
                });
            }
            let sample_labels = dataset.subset(&result.sample_ids)?.labels().map(<[i64]>::to_vec);
            write(&out, "embedding.csv", &result.embedding.to_csv_string(dataset.labels()), &mut manifest)?;
            let sample_csv = result.sample_embedding.to_csv_string(sample_labels.as_deref());
            write(&out, "sample_embedding.csv", &sample_csv, &mut manifest)?;
            let score = match dataset.labels() {
                Some(labels) => silhouette(&result.embedding, labels).ok(),
                None => None,
            };
            let stages: Vec<serde_json::Value> = result
                .stages
                .iter()
                .map(|s| {
                    json!({
                        "stage": s.stage, "rho": s.rho, "perplexity": s.perplexity, "n": s.n,
                        "kl_initial": s.kl_initial, "kl_final": s.kl_final,
                    })
                })
                .collect();
            let report = json!({
                "plan": plan,
                "stages": stages,
                "prolonged_points": result.prolongations.len(),
                "silhouette": score,
            });
            write(&out, "pipeline.json", &serde_json::to_string_pretty(&report)?, &mut manifest)?;
            if *svg {
                let title = format!("{}, rate {rate}, Per' {per_sample}, Per {per_full}", dataset.name());
                let doc = svg::scatter_document(&result.embedding, dataset.labels(), &title, cli.seed);
                write(&out, "embedding.svg", &doc, &mut manifest)?;
            }
            manifest.write(&out)
        }
        Command::Budget {
            n,
            perplexity,
            max_bytes,
            mode,
            bytes_per_entry,
        } => {
            if !(*max_bytes > 0.0 && *bytes_per_entry > 0.0 && *perplexity > 0.0) {
                return Err(CliError::Usage("budget values must be positive".into()));
            }
            let budget = Budget {
                max_bytes: *max_bytes,
                bytes_per_entry: *bytes_per_entry,
                mode: match mode {
                    ModeArg::Dense => AffinityMode::Dense,
                    ModeArg::Sparse => AffinityMode::Sparse,
                },
            };
            let plan = budget_plan(*n, *perplexity, &budget);
            println!("{}", serde_json::to_string(&plan)?);
            if plan.feasible {
                Ok(())
            } else {
                Err(CliError::Budget(format!(
                    "no sampling rate fits {max_bytes} bytes at perplexity {perplexity}"
                )))
            }
        }
        Command::Compare { a, b, k } => {
            let mut manifest = RunManifest::new("compare", cli.seed, json!({ "k": k }));
            manifest.add_input(a)?;
            manifest.add_input(b)?;
            let (ea, _) = Embedding::load_csv(a)?;
            let (eb, _) = Embedding::load_csv(b)?;
            let score = knn_overlap(&ea, &eb, *k)?;
            let text = serde_json::to_string(&score)?;
            println!("{text}");
            let out = prepare_output(&cli.output_dir)?;
            write(&out, "compare.json", &text, &mut manifest)?;
            manifest.write(&out)
        }
    }
}

fn prepare_output(dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}

fn write(dir: &Path, name: &str, content: &str, manifest: &mut RunManifest) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, content).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    manifest.outputs.push(name.into());
    Ok(())
}

fn load_input(cli: &Cli, input: &InputArgs, manifest: &mut RunManifest) -> Result<Dataset, CliError> {
    match (&input.input, &input.synthetic) {
        (Some(path), _) => {
            manifest.add_input(path)?;
            let format = match (path.extension().and_then(|e| e.to_str()), cli.format) {
                (Some("bin"), _) => MatrixFormat::Binary,
                (Some("csv"), _) => MatrixFormat::Csv,
                (_, Some(FormatArg::Bin)) => MatrixFormat::Binary,
                _ => MatrixFormat::Csv,
            };
            Ok(Dataset::load(path, format)?)
        }
        (None, Some(spec)) => Ok(gaussian_mixture(&parse_synthetic(spec)?)?),
        (None, None) => Err(CliError::Usage("--input or --synthetic is required".into())),
    }
}

fn parse_synthetic(spec: &str) -> Result<MixtureSpec, CliError> {
    let parts: Vec<u64> = spec
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("--synthetic expects n,dim,clusters[,seed]: {e}")))?;
    match parts.as_slice() {
        [n, d, k] | [n, d, k, _] if *n >= 2 && *d >= 1 && *k >= 1 => Ok(MixtureSpec::new(
            *n as usize,
            *d as usize,
            *k as usize,
            parts.get(3).copied().unwrap_or(0),
        )),
        _ => Err(CliError::Usage(format!("--synthetic expects n,dim,clusters[,seed], got {spec:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_spec_parsing() {
        let spec = parse_synthetic("100,3,2").unwrap();
        assert_eq!((spec.n, spec.dim, spec.clusters, spec.seed), (100, 3, 2, 0));
        assert_eq!(parse_synthetic("100,3,2,9").unwrap().seed, 9);
        assert!(parse_synthetic("100,3").is_err());
        assert!(parse_synthetic("1,3,2").is_err());
        assert!(parse_synthetic("a,b,c").is_err());
    }
}

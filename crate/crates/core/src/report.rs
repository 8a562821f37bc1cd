//! Run artifacts: the structured JSON log plus flat CSVs for plotting
//! (cranking path, per-iteration fuse and recloser currents, BESS energy,
//! realized voltages). Floats print at six significant digits so artifacts
//! diff cleanly across runs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::engine::RestorationLog;
use crate::error::CoreError;
use crate::feeder::NetworkGraph;
use crate::ids::Phase;
use crate::util::fmt_sig;

fn write(path: &Path, contents: String) -> Result<(), CoreError> {
    fs::write(path, contents).map_err(|e| CoreError::Io(format!("{}: {e}", path.display())))
}

pub fn write_all(log: &RestorationLog, graph: &NetworkGraph, dir: &Path) -> Result<(), CoreError> {
    fs::create_dir_all(dir).map_err(|e| CoreError::Io(format!("{}: {e}", dir.display())))?;
    let json = serde_json::to_string_pretty(log)
        .map_err(|e| CoreError::Internal(format!("log serialization: {e}")))?;
    write(&dir.join("log.json"), json)?;
    write(&dir.join("cranking_path.csv"), cranking_path_csv(log))?;
    write(&dir.join("inrush_fuses.csv"), fuses_csv(log))?;
    write(&dir.join("inrush_reclosers.csv"), reclosers_csv(log))?;
    write(&dir.join("energy.csv"), energy_csv(log))?;
    write(&dir.join("voltages.csv"), voltages_csv(log, graph))?;
    Ok(())
}

pub fn cranking_path_csv(log: &RestorationLog) -> String {
    let mut out =
        String::from("step,time,blocks_energized,esw_closed,ssw_closed,nl_pickups,held,restored_cl_kw,restored_nl_kw\n");
    for s in &log.steps {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.step,
            s.time,
            s.executed.blocks_energized.join("|"),
            s.executed.esw_closed.join("|"),
            s.executed.ssw_closed.join("|"),
            s.executed.nl_pickups.join("|"),
            s.executed.held,
            fmt_sig(s.executed.restored_cl_kw, 6),
            fmt_sig(s.executed.restored_nl_kw, 6),
        );
    }
    out
}

pub fn fuses_csv(log: &RestorationLog) -> String {
    let mut out = String::from("step,time,iteration,mg,block,lateral,fuse,phase,theta_wc_deg,i_peak_a,flag\n");
    for s in &log.steps {
        for it in &s.iterations {
            for mg in &it.mg_reports {
                for lat in &mg.laterals {
                    for p in Phase::ALL {
                        let i = lat.peaks_a[p.index()];
                        if i == 0.0 {
                            continue;
                        }
                        let _ = writeln!(
                            out,
                            "{},{},{},{},{},{},{},{},{},{},{}",
                            s.step,
                            s.time,
                            it.index,
                            mg.mg_source,
                            lat.block,
                            lat.lateral,
                            lat.fuse,
                            p,
                            fmt_sig(lat.theta_wc_deg, 6),
                            fmt_sig(i, 6),
                            lat.flags[p.index()],
                        );
                    }
                }
            }
        }
    }
    out
}

pub fn reclosers_csv(log: &RestorationLog) -> String {
    let mut out = String::from("step,time,iteration,mg,recloser,phase,i_peak_a,flag\n");
    for s in &log.steps {
        for it in &s.iterations {
            for mg in &it.mg_reports {
                for p in Phase::ALL {
                    let i = mg.recloser_peaks_a[p.index()];
                    if i == 0.0 {
                        continue;
                    }
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{}",
                        s.step,
                        s.time,
                        it.index,
                        mg.mg_source,
                        mg.recloser,
                        p,
                        fmt_sig(i, 6),
                        mg.recloser_flags[p.index()],
                    );
                }
            }
        }
    }
    out
}

pub fn energy_csv(log: &RestorationLog) -> String {
    let mut out = String::from("step,time,bess_bus,soc,p_kw,cum_discharge_kwh\n");
    for s in &log.steps {
        for (bus, soc) in &s.executed.soc {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.step,
                s.time,
                bus,
                fmt_sig(*soc, 6),
                fmt_sig(s.executed.p_bess_kw.get(bus).copied().unwrap_or(0.0), 6),
                fmt_sig(
                    s.executed.cum_discharge_kwh.get(bus).copied().unwrap_or(0.0),
                    6
                ),
            );
        }
    }
    out
}

pub fn voltages_csv(log: &RestorationLog, graph: &NetworkGraph) -> String {
    let mut out = String::from("step,time,bus,phase,v_pu\n");
    for s in &log.steps {
        for (b, v) in s.executed.v_pu.iter().enumerate() {
            for p in graph.bus_phases[b].iter() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    s.step,
                    s.time,
                    graph.bus_names[b],
                    p,
                    fmt_sig(v[p.index()], 6),
                );
            }
        }
    }
    out
}

/// Sweep table for the `inrush` command: one row per angle.
pub fn sweep_csv(sweep: &crate::inrush::SweepResult, graph: &NetworkGraph) -> String {
    let mut out =
        String::from("theta_deg,i_peak_a_A,i_peak_a_B,i_peak_a_C,block_max_a,block_max_ka,max_phase,is_theta_wc\n");
    let _ = graph;
    for row in &sweep.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt_sig(row.theta_deg, 6),
            fmt_sig(row.per_phase_a[0], 6),
            fmt_sig(row.per_phase_a[1], 6),
            fmt_sig(row.per_phase_a[2], 6),
            fmt_sig(row.block_max_a, 6),
            format!("{:.4}", row.block_max_a / 1000.0),
            row.max_phase.map(|p| p.to_string()).unwrap_or_default(),
            (row.theta_deg - sweep.theta_wc_deg).abs() < 1e-9,
        );
    }
    out
}

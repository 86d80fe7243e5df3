use super::store::Store;
use super::{JobKey, Shared, PROGRESS_EVERY};
use crate::event::{decode_fragment, FragmentFile, FragmentMeta};
use crate::filter::{parse, CompiledFilter};
use crate::wire::{LocalState, RunDescriptor};
use std::sync::Arc;

/// Waits for an executor slot, then filters every listed fragment into its
/// own result file.
pub(super) async fn run(shared: Arc<Shared>, desc: RunDescriptor) {
    let key: JobKey = (desc.job_id, desc.task.clone());
    let permit = shared.executors.clone().acquire_owned().await;
    shared.update_job(&key, |s| s.state = LocalState::Running);
    let (s2, k2) = (shared.clone(), key.clone());
    let outcome = tokio::task::spawn_blocking(move || execute(&s2, &k2, &desc)).await;
    drop(permit);
    let outcome = outcome.unwrap_or_else(|e| Err(format!("executor panicked: {e}")));
    if shared.killed() {
        return;
    }
    shared.update_job(&key, |s| match outcome {
        Ok(results) => {
            s.results = results;
            s.state = LocalState::Done;
        }
        Err(msg) => {
            tracing::warn!(job_id = s.job_id, task = %s.task, error = %msg, "run failed");
            s.error = Some(msg);
            s.state = LocalState::Failed;
        }
    });
}

fn execute(shared: &Shared, key: &JobKey, desc: &RunDescriptor) -> Result<Vec<(u32, String)>, String> {
    let expr = parse(&desc.filter).map_err(|e| e.to_string())?;
    let (mut scanned, mut passed) = (0u64, 0u64);
    let progress = |scanned: u64, passed: u64| -> Result<(), String> {
        shared.update_job(key, |s| {
            s.events_scanned = scanned;
            s.events_passed = passed;
        });
        if !shared.cfg.progress_delay.is_zero() {
            std::thread::sleep(shared.cfg.progress_delay);
        }
        if shared.killed() {
            return Err("agent stopped".into());
        }
        Ok(())
    };

    let mut results = Vec::with_capacity(desc.fragment_indices.len());
    for &idx in &desc.fragment_indices {
        let path = shared.store.fragment_path(desc.dataset_id, idx);
        let bytes = std::fs::read(&path).map_err(|e| format!("fragment ({}, {idx}): {e}", desc.dataset_id))?;
        let frag =
            decode_fragment(&bytes).map_err(|e| format!("fragment ({}, {idx}) {}: {e}", desc.dataset_id, e.code()))?;
        drop(bytes);
        let filter = CompiledFilter::new(&expr, &frag.schema, desc.calibration.as_ref()).map_err(|e| e.to_string())?;

        let mut selected = Vec::new();
        for (i, mut ev) in frag.events.into_iter().enumerate() {
            if filter.calibrate_and_test(&mut ev.values) {
                selected.push(ev);
                passed += 1;
            }
            scanned += 1;
            if (i as u64 + 1).is_multiple_of(PROGRESS_EVERY) {
                progress(scanned, passed)?;
            }
        }
        let result = FragmentFile {
            meta: FragmentMeta {
                dataset_id: frag.meta.dataset_id,
                fragment_index: frag.meta.fragment_index,
                event_count: selected.len() as u32,
                first_event_ordinal: frag.meta.first_event_ordinal,
            },
            schema: frag.schema,
            events: selected,
        };
        let encoded = result.encode().map_err(|e| e.to_string())?;
        let rel = Store::result_rel_path(desc.job_id, &desc.task, idx);
        if shared.killed() {
            return Err("agent stopped".into());
        }
        shared
            .store
            .write_result(&rel, &encoded)
            .map_err(|e| format!("cannot write result: {e}"))?;
        results.push((idx, rel));
        progress(scanned, passed)?;
    }
    Ok(results)
}

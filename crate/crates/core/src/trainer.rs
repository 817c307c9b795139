//! Deterministic optimization loop: per-clip masking and motion weighting,
//! student forward, detached teacher targets, one AdamW step, then the EMA
//! teacher update. A single ChaCha stream drives every random draw in a
//! fixed order, so (seed, config, manifest) pins the whole run — including
//! resumes, which restore the stream position from the checkpoint.

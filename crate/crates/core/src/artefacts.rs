//! Artefact registry (under construction).

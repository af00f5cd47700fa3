//! Every layer against a direct loop implementation on random small instances.

mod common;

use common::oracle::*;

const INSTANCES: u64 = 120;

#[test]
fn object_layer_matches_loops() {
    check_object_layer(INSTANCES);
}

#[test]
fn relation_and_attribute_layers_match_loops() {
    check_context_layers(INSTANCES);
}

#[test]
fn intra_fuse_matches_loops() {
    check_intra_fuse(INSTANCES);
}

#[test]
fn guided_attention_matches_loops() {
    check_guided_attention(INSTANCES);
}

#[test]
fn context_formation_and_update_match_loops() {
    check_context_update(INSTANCES);
}

#[test]
fn split_and_pool_matches_loops() {
    check_split_and_pool(INSTANCES);
}

#[test]
fn local_attention_matches_loops() {
    check_local_attention(INSTANCES);
}

#[test]
fn hard_negative_mining_matches_loops() {
    check_hard_negatives(INSTANCES);
}

//! Interaction, event-log and feature loading; seeded dataset splits.

mod events;
mod features;
mod interactions;
mod split;

pub use events::{
    events_to_interactions, read_event_log, read_objects, read_relationships, EventKind,
    ObjectRegistry, ObjectServiceEvent, Relationship, SIoTObject,
};
pub use features::{load_modality_features, FeatureLoadReport, ModalityFeatures, FEATURE_MAGIC};
pub use interactions::{
    index_map_paths, load_interactions, IdMap, Interaction, InteractionFormat, InteractionSet,
};
pub use split::{cold_start_split, split_dataset, SplitBundle, SplitRatios};

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn canonical_csv_round_trip(
            pairs in proptest::collection::vec((0usize..6, 0usize..9, 1u8..4, proptest::option::of(0i64..1000)), 1..40)
        ) {
            let users = std::sync::Arc::new(IdMap::sequential("user-", 6));
            let items = std::sync::Arc::new(IdMap::sequential("item-", 9));
            let records = pairs
                .iter()
                .map(|&(user, item, w, timestamp)| Interaction { user, item, weight: w as f64, timestamp })
                .collect();
            let set = InteractionSet::from_records(users, items, records).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("x.csv");
            set.write_csv(&path).unwrap();
            let back = load_interactions(&path, InteractionFormat::Csv).unwrap();
            prop_assert_eq!(&set, &back);
        }

        #[test]
        fn index_maps_are_bijections(ids in proptest::collection::vec("[a-z]{1,3}", 1..50)) {
            let mut map = IdMap::new();
            for id in &ids {
                map.get_or_insert(id);
            }
            for (i, id) in map.ids().iter().enumerate() {
                prop_assert_eq!(map.get(id), Some(i));
                prop_assert_eq!(map.id(i), Some(id.as_str()));
            }
            let distinct: std::collections::BTreeSet<_> = ids.iter().collect();
            prop_assert_eq!(distinct.len(), map.len());
        }
    }
}

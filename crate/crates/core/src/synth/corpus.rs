use crate::seeds;
use crate::simenv::Document;

use super::graph::{EntityGraph, ATTRIBUTE_KEYS};

pub fn attribute_sentence(key: &str, value: &str) -> String {
    format!("Its {key} is {value}.")
}

pub fn relation_sentence(src: &str, label: &str, dst: &str) -> String {
    format!("{src} {label} {dst}.")
}

/// One document per entity: attribute sentences, then its outgoing relations
/// in seeded order. Links follow the relation sentences.
pub fn render_corpus(graph: &EntityGraph, seed: u64) -> Vec<Document> {
    graph
        .entities
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut sentences: Vec<String> = ATTRIBUTE_KEYS
                .iter()
                .filter_map(|k| e.attributes.get(*k).map(|v| attribute_sentence(k, v)))
                .collect();
            let mut rels: Vec<_> = graph.outgoing(i).collect();
            seeds::shuffle(&mut seeds::rng(seeds::derive(&[seed, i as u64])), &mut rels);
            let mut links = Vec::new();
            for r in rels {
                let dst = &graph.entities[r.dst];
                sentences.push(relation_sentence(&e.name, &r.label, &dst.name));
                if !links.contains(&dst.id) {
                    links.push(dst.id.clone());
                }
            }
            Document {
                id: e.id.clone(),
                title: e.name.clone(),
                text: sentences.join(" "),
                links,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simenv::SimEnv;
    use crate::synth::generate_graph;

    #[test]
    fn one_document_per_entity_and_relations_stated() {
        let g = generate_graph(2, 10, 3);
        let docs = render_corpus(&g, 2);
        assert_eq!(docs.len(), 10);
        for r in &g.relations {
            assert!(docs[r.src].text.contains(&g.entities[r.dst].name));
            assert!(docs[r.src].links.contains(&g.entities[r.dst].id));
        }
        assert_eq!(docs, render_corpus(&g, 2));
        SimEnv::new(docs).unwrap();
    }
}

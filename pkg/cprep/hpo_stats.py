import json
import logging
import argparse

import pandas as pd

from cpheno.ontology import graph_statistics, keyword_list, load_graph, parse_ontology, terminal_nodes

logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)


def parse_args():
    parser = argparse.ArgumentParser(
        description="Report node, edge and keyword statistics of a phenotype ontology"
    )
    parser.add_argument(
        "ontology",
        help="OBO file, or graph JSONL written by build-kg",
    )
    parser.add_argument(
        "-k",
        "--keywords",
        help="Write the terminal keyword list to this CSV",
    )
    parser.add_argument(
        "-j",
        "--json",
        action="store_true",
        help="Print the statistics as JSON",
    )
    return parser.parse_args()


def keyword_table(graph) -> pd.DataFrame:
    """One row per (keyword, term id), with the term's canonical name"""
    rows = [
        {"keyword": keyword, "term_id": term_id, "name": graph.term(term_id).name}
        for keyword, term_id in keyword_list(graph)
    ]
    return pd.DataFrame(rows, columns=["keyword", "term_id", "name"])


def main():
    args = parse_args()

    if args.ontology.endswith(".jsonl"):
        graph = load_graph(args.ontology)
    else:
        graph = parse_ontology(args.ontology)
    stats = graph_statistics(graph)

    if args.json:
        print(json.dumps(stats, indent=2, sort_keys=True))
    else:
        format_str = "  {:<24} : {:<24}"
        print("\n=== Ontology Statistics ===\n")
        for key, value in stats.items():
            print(format_str.format(key, str(value)))

    if args.keywords:
        table = keyword_table(graph)
        table.to_csv(args.keywords, index=False)
        logger.info(
            f"Wrote {len(table)} keywords of {len(terminal_nodes(graph))} terminal phenotypes to {args.keywords}"
        )


if __name__ == "__main__":
    main()
    # python -m cprep.hpo_stats hp.obo -k keywords.csv

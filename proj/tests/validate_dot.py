"""Parses DOT files exported by the smarttree tool with pydot and checks
their structure against the tree JSON they came from."""

import json
import pathlib
import subprocess
import sys
import tempfile

import pydot


def run(tool, *args):
    subprocess.run([tool, *args], check=True, capture_output=True)


def check(tree_path, dot_path):
    tree = json.loads(pathlib.Path(tree_path).read_text())
    graphs = pydot.graph_from_dot_file(str(dot_path))
    if not graphs or len(graphs) != 1:
        raise AssertionError(f"{dot_path}: expected one graph, parsed {len(graphs or [])}")
    graph = graphs[0]
    nodes = [n for n in graph.get_nodes() if n.get_name() not in ("node", "edge", "graph")]
    edges = graph.get_edges()
    n_nodes = len(tree["nodes"])
    splits = sum(1 for n in tree["nodes"] if n.get("split") is not None)
    if len(nodes) != n_nodes:
        raise AssertionError(f"{dot_path}: {len(nodes)} nodes, tree has {n_nodes}")
    if len(edges) != 2 * splits:
        raise AssertionError(f"{dot_path}: {len(edges)} edges, tree has {splits} splits")
    names = {n.get_name() for n in nodes}
    for e in edges:
        if e.get_source() not in names or e.get_destination() not in names:
            raise AssertionError(f"{dot_path}: edge {e.get_source()} -> {e.get_destination()} names a missing node")
    for n in nodes:
        if not n.get("label"):
            raise AssertionError(f"{dot_path}: node {n.get_name()} has no label")
    return len(nodes), len(edges)


def main():
    tool = sys.argv[1]
    with tempfile.TemporaryDirectory() as tmp:
        d = pathlib.Path(tmp)
        run(tool, "synth", "--reference", "--n-drives", "400", "--days", "120", "--seed", "4", "--out-dir", str(d / "synth"))
        run(tool, "ingest", str(d / "synth/fleet.csv"), "--out-dir", str(d / "ingest"))
        for mode in ("survival", "classify"):
            run(tool, "dataset", "--cache", str(d / "ingest/snapshots.csv"), "--mode", mode, "--out-dir", str(d / mode))
            extra = ["--class-loss", "gini"] if mode == "classify" else []
            for depth in ("1", "4"):
                out = d / f"{mode}_tree{depth}"
                run(tool, "train", "--dataset", str(d / mode / "dataset.json"), "--max-depth", depth, "--cp", "0",
                    *extra, "--out-dir", str(out))
                run(tool, "export", "--tree", str(out / "tree.json"), "--format", "dot", "--out-dir", str(out))
                n, e = check(out / "tree.json", out / "tree.dot")
                print(f"{mode} depth {depth}: {n} nodes, {e} edges parsed")


if __name__ == "__main__":
    main()

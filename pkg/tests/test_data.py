from __future__ import annotations

import json

import pytest

from segdst.core import BoundarySet, Conversation, DialogueStateRecord, Turn
from segdst.data import (DatasetBundle, DatasetError, load_dataset, load_dialseg711, load_jsonl, load_mwoz,
                         mwoz_slot_name, parse_dialseg_text, seeded_permutation, split_dev_test, write_jsonl)

from conftest import DIALSEG_DIR, MWOZ_DIR, OPEN_JSONL


class TestFixtureCounts:
    def test_open_domain(self, open_bundle):
        assert len(open_bundle) == 5 and open_bundle.turn_count == 15
        assert open_bundle.gold_kind() == "record"
        assert sum(len(g.boundaries.indices) for g in open_bundle.gold.values()) == 5

    def test_mwoz_test_list(self, mwoz_bundle):
        assert [c.id for c in mwoz_bundle.conversations] == ["MUL0001.json", "PMUL0002.json"]
        assert mwoz_bundle.turn_count == 5 and mwoz_bundle.gold_kind() == "slots"

    def test_mwoz_whole_file(self):
        bundle = load_mwoz(MWOZ_DIR / "data.json", "2.1")
        assert (len(bundle), bundle.turn_count, bundle.format) == (3, 7, "mwoz21")

    def test_dialseg(self, dialseg_bundle):
        assert len(dialseg_bundle) == 3 and dialseg_bundle.turn_count == 11
        assert sum(len(b.indices) for b in dialseg_bundle.gold.values()) == 3
        assert dialseg_bundle.gold["dial_0003"].indices == {2, 4}


class TestMwoz:
    def test_cumulative_gold(self, mwoz_bundle):
        states = mwoz_bundle.gold["MUL0001.json"]
        assert states[0].state == {"hotel-area": "east", "hotel-parking": "yes", "hotel-price_range": "cheap",
                                   "hotel-type": "guesthouse"}
        assert states[2].state["taxi-leave at"] == "17:00"
        assert set(states[1].state) <= set(states[2].state)

    def test_empty_metadata(self):
        bundle = load_mwoz(MWOZ_DIR / "data.json", ids=["SNG0003.json"])
        assert [s.state for s in bundle.gold["SNG0003.json"]] == [{}, {}]

    @pytest.mark.parametrize("domain,section,key,expected", [
        ("hotel", "semi", "pricerange", "hotel-price_range"),
        ("hotel", "book", "people", "hotel-book number_of_people"),
        ("hotel", "book", "stay", "hotel-book number_of_days"),
        ("train", "semi", "arriveBy", "train-arrive_by_time"),
        ("train", "semi", "leaveAt", "train-leave_at_time"),
        ("taxi", "semi", "leaveAt", "taxi-leave at"),
        ("restaurant", "book", "time", "restaurant-book time"),
    ])
    def test_slot_names(self, domain, section, key, expected):
        assert mwoz_slot_name(domain, section, key) == expected

    def test_odd_log_names_dialogue(self, tmp_path):
        data = {"BAD01.json": {"log": [{"text": "hi", "metadata": {}}]}}
        (tmp_path / "data.json").write_text(json.dumps(data))
        with pytest.raises(DatasetError, match="BAD01.json"):
            load_mwoz(tmp_path / "data.json")

    def test_not_mwoz(self, tmp_path):
        (tmp_path / "data.json").write_text("[1, 2]")
        with pytest.raises(DatasetError):
            load_mwoz(tmp_path)

    def test_bad_version(self):
        with pytest.raises(DatasetError):
            load_mwoz(MWOZ_DIR, "2.2")


class TestDialseg:
    def test_trailing_user_turn(self):
        conv, bounds = parse_dialseg_text("a\nb\n===\nc\n", "x")
        assert [t.agent for t in conv.turns] == ["b", None]
        assert bounds.indices == {1}

    def test_separator_inside_turn(self):
        with pytest.raises(DatasetError, match="splits a turn"):
            parse_dialseg_text("a\n===\nb\n", "x")

    def test_custom_separator(self):
        conv, bounds = parse_dialseg_text("a\nb\n--\nc\nd\n", "x", separator=r"^--$")
        assert len(conv) == 2 and bounds.indices == {1}

    def test_leading_and_trailing_separators_ignored(self):
        _, bounds = parse_dialseg_text("===\na\nb\n===\n", "x")
        assert bounds.indices == set()

    def test_empty(self):
        with pytest.raises(DatasetError):
            parse_dialseg_text("===\n", "x")

    def test_not_a_directory(self):
        with pytest.raises(DatasetError):
            load_dialseg711(OPEN_JSONL)


class TestJsonl:
    @pytest.mark.parametrize("path,fmt", [(OPEN_JSONL, "jsonl"), (MWOZ_DIR, "mwoz24"), (DIALSEG_DIR, "dialseg711")])
    def test_roundtrip(self, tmp_path, path, fmt):
        bundle = load_dataset(path, fmt)
        out = tmp_path / "x.jsonl"
        write_jsonl(bundle, out)
        again = load_jsonl(out)
        assert again.conversations == bundle.conversations
        assert {k: v for k, v in again.gold.items()} == {k: (list(v) if isinstance(v, list) else v)
                                                         for k, v in bundle.gold.items()}

    def test_error_has_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(OPEN_JSONL.read_text().splitlines()[0] + "\n{not json}\n")
        with pytest.raises(DatasetError, match=r"bad.jsonl:2"):
            load_jsonl(path)

    def test_invalid_record_gold(self, tmp_path):
        line = {"id": "x", "turns": [{"user": "a", "agent": "b"}, {"user": "c"}],
                "gold": {"type": "record", "boundaries": [1], "segments": [{"start": 1, "end": 2}]}}
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(line) + "\n")
        with pytest.raises(DatasetError, match="cut points"):
            load_jsonl(path)

    def test_duplicate_ids(self, tmp_path):
        line = OPEN_JSONL.read_text().splitlines()[0]
        path = tmp_path / "dup.jsonl"
        path.write_text(line + "\n" + line + "\n")
        with pytest.raises(DatasetError, match="duplicate"):
            load_jsonl(path)

    def test_unknown_format(self):
        with pytest.raises(DatasetError):
            load_dataset(OPEN_JSONL, "csv")


def synthetic_bundle(n: int) -> DatasetBundle:
    convs = tuple(Conversation(f"c{i:04d}", (Turn(1, f"hello {i}", "hi"),)) for i in range(n))
    return DatasetBundle(convs)


class TestSplit:
    def test_sizes(self):
        dev, test = split_dev_test(synthetic_bundle(484), 150, seed=7)
        assert (len(dev), len(test)) == (150, 334)
        assert not {c.id for c in dev.conversations} & {c.id for c in test.conversations}

    def test_deterministic_and_seed_sensitive(self):
        bundle = synthetic_bundle(484)
        a = split_dev_test(bundle, 150, 0)[0]
        b = split_dev_test(bundle, 150, 0)[0]
        c = split_dev_test(bundle, 150, 1)[0]
        assert a == b and a != c

    def test_frozen_permutation(self):
        # values from a separate hexdigest-based implementation; pinned so any
        # change to the shuffle shows up here instead of as a silent reshuffle
        assert "".join(seeded_permutation(list("abcdefghij"), 0)) == "afjhcegdib"
        assert "".join(seeded_permutation(list("abcdefghij"), 42)) == "ejhaifbgcd"
        assert sorted(seeded_permutation(list(range(50)), 3)) == list(range(50))

    def test_input_order_irrelevant(self):
        convs = list(synthetic_bundle(30).conversations)
        a = split_dev_test(DatasetBundle(tuple(convs)), 10, 5)
        b = split_dev_test(DatasetBundle(tuple(reversed(convs))), 10, 5)
        assert a == b

    @pytest.mark.parametrize("n_dev", [-1, 484])
    def test_bad_size(self, n_dev):
        with pytest.raises(DatasetError):
            split_dev_test(synthetic_bundle(484), n_dev)


class TestBundle:
    def test_gold_length_checked(self):
        conv = Conversation("x", (Turn(1, "a", "b"),))
        with pytest.raises(DatasetError):
            DatasetBundle((conv,), {"x": BoundarySet(2)})

    def test_subset(self, open_bundle):
        sub = open_bundle.subset(["conv-002", "conv-004"])
        assert [c.id for c in sub.conversations] == ["conv-002", "conv-004"]
        assert isinstance(sub.gold["conv-002"], DialogueStateRecord)

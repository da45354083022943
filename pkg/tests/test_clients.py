import json

import pytest

from semfed.clients import (
    MarkovToyClient,
    PrivateDataset,
    ScriptedClient,
    TrainingWeights,
    load_private_datasets,
    load_scripted_clients,
)

EVEN = TrainingWeights()


def private(owner, *examples):
    return PrivateDataset(examples=tuple(examples), owner=owner)


# ------------------------------------------------------------ weights


def test_weights_default_even_split():
    assert EVEN.alpha == 0.5
    assert EVEN.beta == 0.5


def test_weights_validation():
    with pytest.raises(ValueError):
        TrainingWeights(alpha=-0.1, beta=1.1)
    with pytest.raises(ValueError):
        TrainingWeights(alpha=0.7, beta=0.7)
    TrainingWeights(alpha=1.0, beta=0.0)  # boundary is fine


# ----------------------------------------------------------- scripted


def test_scripted_client_replays_table():
    client = ScriptedClient({(1, "p7"): "blue", (2, "p7"): "green"})
    assert client.generate("p7", "what color?", 1, 64) == "blue"
    assert client.generate("p7", "what color?", 2, 64) == "green"


def test_scripted_client_missing_key_raises():
    client = ScriptedClient({(1, "p7"): "blue"})
    with pytest.raises(KeyError):
        client.generate("p8", "other prompt", 1, 64)


def test_scripted_client_train_is_noop():
    client = ScriptedClient({(1, "p0"): "x"})
    client.train(private(0, ("a", "b")), [("c", "d")], EVEN)
    assert client.generate("p0", "", 1, 4) == "x"


# ------------------------------------------------------------- markov


def test_markov_hand_computed_transition_table():
    client = MarkovToyClient(order=1, seed=0)
    client.train(private(0, ("", "a b a b")), [], EVEN)
    # stream a b a b: a->b twice, b->a once, each weighted alpha=0.5
    assert client.transitions == {("a",): {"b": 1.0}, ("b",): {"a": 0.5}}


def test_markov_generates_learned_alternation():
    client = MarkovToyClient(order=1, seed=0)
    client.train(private(0, ("", "a b a b")), [], EVEN)
    assert client.generate("p0", "a", 1, 5) == "b a b a b"
    assert client.generate("p0", "b", 1, 3) == "a b a"


def test_markov_generate_is_deterministic():
    client = MarkovToyClient(order=1, seed=3)
    client.train(
        private(0, ("", "x y"), ("", "x z"), ("", "x y z x")),
        [("q", "x y x z")],
        EVEN,
    )
    first = client.generate("p0", "the question x", 1, 16)
    second = client.generate("p0", "the question x", 1, 16)
    assert first == second


def test_markov_untrained_generates_empty():
    assert MarkovToyClient(order=1, seed=0).generate("p0", "anything", 1, 8) == ""


def test_markov_empty_pseudo_equals_private_alone():
    a = MarkovToyClient(order=1, seed=0)
    a.train(private(0, ("q", "a b c")), [], EVEN)
    b = MarkovToyClient(order=1, seed=0)
    b.train(private(0, ("q", "a b c")), [], TrainingWeights(alpha=0.5, beta=0.5))
    assert a.transitions == b.transitions
    # and the counts carry exactly the alpha weight
    assert a.transitions[("q",)] == {"a": 0.5}


def test_markov_same_example_in_both_sets_sums_to_one():
    client = MarkovToyClient(order=1, seed=0)
    client.train(private(0, ("q", "a b")), [("q", "a b")], EVEN)
    # alpha + beta = 1, so the combined weight equals one full count
    assert client.transitions == {("q",): {"a": 1.0}, ("a",): {"b": 1.0}}


def test_markov_two_example_corpus_exact_counts():
    client = MarkovToyClient(order=1, seed=0)
    client.train(private(0, ("go", "a b"), ("a", "b c")), [], EVEN)
    assert client.transitions == {
        ("go",): {"a": 0.5},
        ("a",): {"b": 1.0},
        ("b",): {"c": 0.5},
    }


def test_markov_order_two_uses_longer_context():
    client = MarkovToyClient(order=2, seed=0)
    client.train(private(0, ("", "a b x"), ("c", "b y")), [], EVEN)
    # context (a b) -> x, (c b) -> y; order-2 context disambiguates
    assert client.generate("p0", "a b", 1, 1) == "x"
    assert client.generate("p0", "c b", 1, 1) == "y"


def test_markov_backs_off_to_shorter_context():
    client = MarkovToyClient(order=2, seed=0)
    client.train(private(0, ("", "a b x")), [], EVEN)
    # context (z b) was never seen; suffix (b) -> x was
    assert client.generate("p0", "z b", 1, 1) == "x"


def test_markov_zero_token_budget_generates_nothing():
    client = MarkovToyClient(order=1, seed=0)
    client.train(private(0, ("", "a b")), [], EVEN)
    assert client.generate("p", "a", 1, 0) == ""


def test_markov_sampling_follows_weights():
    corpus = private(0, *((("", "a b"),) * 9), ("", "a c"))
    words = []
    for seed in range(40):
        client = MarkovToyClient(order=1, seed=seed)
        client.train(corpus, [], EVEN)
        words.append(client.generate("p", "a", 1, 1))
    # b carries 9x the weight of c; across seeds b must dominate but c
    # must still appear
    assert words.count("b") > words.count("c") > 0


def test_markov_order_validation():
    with pytest.raises(ValueError):
        MarkovToyClient(order=0)


# ------------------------------------------------------------ loaders


def test_load_scripted_clients(tmp_path):
    path = tmp_path / "responses.jsonl"
    rows = [
        {"client": 0, "round": 1, "prompt_id": "p0", "response": "alpha"},
        {"client": 1, "round": 1, "prompt_id": "p0", "response": "beta"},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    clients = load_scripted_clients(path)
    assert len(clients) == 2
    assert clients[0].generate("p0", "", 1, 8) == "alpha"
    assert clients[1].generate("p0", "", 1, 8) == "beta"


def test_load_scripted_clients_rejects_gaps_and_duplicates(tmp_path):
    path = tmp_path / "responses.jsonl"
    path.write_text(json.dumps({"client": 1, "round": 1, "prompt_id": "p0", "response": "x"}) + "\n")
    with pytest.raises(ValueError, match="0..K-1"):
        load_scripted_clients(path)
    row = {"client": 0, "round": 1, "prompt_id": "p0", "response": "x"}
    path.write_text(json.dumps(row) + "\n" + json.dumps(row) + "\n")
    with pytest.raises(ValueError, match="duplicate"):
        load_scripted_clients(path)


def test_load_private_datasets(tmp_path):
    path = tmp_path / "private.jsonl"
    rows = [
        {"client": 0, "prompt": "q1", "response": "r1"},
        {"client": 0, "prompt": "q2", "response": "r2"},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    datasets = load_private_datasets(path, 2)
    assert datasets[0].examples == (("q1", "r1"), ("q2", "r2"))
    assert datasets[1].examples == ()


def test_load_private_datasets_rejects_unknown_client(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"client": 5, "prompt": "q", "response": "r"}) + "\n")
    with pytest.raises(ValueError, match="outside"):
        load_private_datasets(path, 1)

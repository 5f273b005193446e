import numpy as np
import pytest

from dcmsim.agents import (
    Agent,
    ModelConfig,
    listen,
    meanings_to_array,
    pad_utterances,
    predict_meaning,
    speak,
)
from dcmsim.language import Condition, Inventory, LanguageSpec, Meaning, build_meaning_space, generate_corpus
from dcmsim.nn import make_rng
from dcmsim.training import SlConfig, train_supervised
from oracles import central_diff, rel_error, sampled_coords

INV = Inventory()
TINY = Inventory(2, 1, 2)
TINY_CFG = ModelConfig(meaning_dim=3, word_dim=4, hidden_dim=5, max_len=6, init_scale=0.5)


@pytest.fixture(scope="module")
def agent():
    return Agent(INV, 7)


def test_parameter_shapes(agent):
    assert agent.meaning_emb.shape == (28, 8)
    assert agent.word_emb.shape == (30, 16)
    assert agent.speaker_gru.W.shape == (48, 16)
    assert agent.listener_gru.U.shape == (48, 16)
    assert agent.head_agent.W.shape == (20, 16)
    assert agent.head_action.W.shape == (8, 16)


def test_embeddings_are_shared_between_roles(agent):
    sp = agent.role_params(True, False)
    li = agent.role_params(False, True)
    assert any(p is agent.word_emb for p in sp) and any(p is agent.word_emb for p in li)
    assert any(p is agent.meaning_emb for p in sp) and any(p is agent.meaning_emb for p in li)
    assert not {id(p) for p in agent.speaker_params()} & {id(p) for p in agent.listener_params()}


def test_same_seed_same_weights():
    a, b = Agent(INV, 3), Agent(INV, 3)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p.value, q.value)
    assert not np.array_equal(Agent(INV, 4).word_emb.value, a.word_emb.value)


def test_greedy_speak_deterministic(agent):
    m = Meaning(2, 1, 15)
    assert speak(agent, m).utterance == speak(agent, m).utterance


@pytest.mark.parametrize("seed", range(5))
def test_utterance_length_bounded(seed):
    a = Agent(INV, seed, ModelConfig(init_scale=2.0))
    rng = make_rng(seed)
    M = meanings_to_array(build_meaning_space(INV, Condition.OBJECT)[::7])
    for greedy in (True, False):
        tokens, lengths, ended, _ = a.decode(M, greedy=greedy, rng=rng)
        assert lengths.max() <= 10 and tokens.shape[1] <= 10
        assert np.all(tokens[~ended] != INV.eos) if (~ended).any() else True
        for i in range(len(M)):
            assert np.all(tokens[i, :lengths[i]] < INV.eos)


def test_sample_logprobs_match_teacher_forced_loss():
    a = Agent(INV, 2, ModelConfig(init_scale=1.0))
    M = meanings_to_array(build_meaning_space(INV, Condition.OBJECT)[:40])
    tokens, lengths, ended, logps = a.decode(M, greedy=False, rng=make_rng(9))
    for i in range(len(M)):
        loss = a.speaker_loss(M[i:i + 1], tokens[i:i + 1], lengths[i:i + 1], ended[i:i + 1], backward=False)
        assert -loss == pytest.approx(logps[i].sum(), abs=1e-10)


def test_listen_distributions_normalised(agent):
    for u in ([0, 10, 20], [5], [28, 28, 28, 28, 28, 28, 28, 28, 28, 28]):
        dists = listen(agent, u)
        assert [len(d) for d in dists] == [8, 20, 20]
        for d in dists:
            assert abs(d.sum() - 1) < 1e-12 and np.all(d >= 0)


def test_empty_utterance_is_uniform(agent):
    for d in listen(agent, []):
        np.testing.assert_allclose(d, np.full(len(d), 1 / len(d)))
    assert predict_meaning(listen(agent, [])) == Meaning(0, 0, 0)


def test_listener_is_order_sensitive():
    same = 0
    for seed in range(100):
        a = Agent(INV, 1000 + seed)
        tokens, lengths = pad_utterances([[0, 10, 20], [10, 0, 20]])
        _, _, h = a._listen_forward(tokens, lengths)
        same += np.allclose(h[0], h[1])
    assert same <= 5


def test_predict_meaning_tie_break():
    one_hot = [np.eye(8)[3], np.eye(20)[4], np.eye(20)[17]]
    assert predict_meaning(one_hot) == Meaning(3, 4, 17)
    assert predict_meaning([np.full(8, 1 / 8), np.full(20, 0.05), np.full(20, 0.05)]) == Meaning(0, 0, 0)


def test_batched_listening_matches_single(agent):
    utts = [[0, 10, 20], [3, 28, 1, 22], [5]]
    tokens, lengths = pad_utterances(utts)
    batch = agent.listen_batch(tokens, lengths)
    for i, u in enumerate(utts):
        for k, d in enumerate(listen(agent, u)):
            np.testing.assert_allclose(batch[k][i], d, rtol=1e-12)


# ---------------------------------------------------------------- gradients

def _check_all_grads(agent, loss_fn, tol=1e-5, k=25):
    agent.zero_grad()
    loss_fn(True)
    rng = make_rng(0)
    for name, p in agent.named_params().items():
        coords = sampled_coords(p.value.size, k, rng)
        num = central_diff(lambda: loss_fn(False), p.value, eps=1e-6, coords=coords)
        ana = p.grad.reshape(-1) if coords is None else p.grad.reshape(-1)[coords]
        numv = num.reshape(-1) if coords is None else num.reshape(-1)[coords]
        assert rel_error(ana, numv) < tol, name


@pytest.mark.parametrize("seed", range(3))
def test_speaker_loss_gradients(seed):
    a = Agent(TINY, seed, TINY_CFG)
    M = meanings_to_array(build_meaning_space(TINY, Condition.OBJECT)[:4])
    tokens, lengths = pad_utterances([[0, 2, 3], [1, 0, 4, 3], [2], [0, 1, 2, 3, 4]])
    ended = np.array([True, True, False, True])
    w = np.array([0.5, -1.0, 2.0, 0.3])
    _check_all_grads(a, lambda bw: a.speaker_loss(M, tokens, lengths, ended, w, entropy_coef=0.1, backward=bw))


@pytest.mark.parametrize("seed", range(3))
def test_listener_loss_gradients(seed):
    a = Agent(TINY, seed, TINY_CFG)
    M = meanings_to_array(build_meaning_space(TINY, Condition.OBJECT)[:4])
    tokens, lengths = pad_utterances([[0, 2, 3], [1, 0, 4, 3], [], [0, 1, 2, 3, 4, 4]])
    w = np.array([1.0, -0.5, 3.0, 0.7])
    _check_all_grads(a, lambda bw: a.listener_loss(tokens, lengths, M, w, backward=bw))


def test_empty_utterance_gives_no_gradient():
    a = Agent(TINY, 0, TINY_CFG)
    tokens, lengths = pad_utterances([[]])
    a.zero_grad()
    a.listener_loss(tokens, lengths, meanings_to_array([Meaning(0, 0, 1)]))
    assert all(not p.grad.any() for p in a.params())


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    a = Agent(INV, 11)
    spec = LanguageSpec(Condition.OBJECT, 0.6, 0.67, 0.5)
    corpus = generate_corpus(build_meaning_space(INV, spec.condition)[:64], spec, make_rng(1), INV)
    train_supervised(a, corpus, SlConfig(epochs=1))
    a.rng.random(3)
    a.save(tmp_path / "a.ckpt", {"phase": "x"})
    b = Agent.load(tmp_path / "a.ckpt")
    for (n, p), q in zip(a.named_params().items(), b.params()):
        for x, y in ((p.value, q.value), (p.adam_m, q.adam_m), (p.adam_v, q.adam_v)):
            assert x.tobytes() == y.tobytes(), n
        assert p.step_count == q.step_count
    assert a.rng.random() == b.rng.random()
    assert b.meta == {"phase": "x"}
    a.save(tmp_path / "a2.ckpt", {"phase": "x"})
    b.save(tmp_path / "b.ckpt", {"phase": "x"})
    assert (tmp_path / "a2.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    M = meanings_to_array(build_meaning_space(INV, Condition.OBJECT)[:20])
    np.testing.assert_array_equal(a.decode(M)[0], b.decode(M)[0])


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x").write_bytes(b"nope\n{}\n")
    with pytest.raises(ValueError):
        Agent.load(tmp_path / "x")


# ---------------------------------------------------------------- overfit oracle

def test_overfit_degenerate_language():
    inv = Inventory(2, 2, 5)
    space = build_meaning_space(inv, Condition.OBJECT)
    assert len(space) == 30
    spec = LanguageSpec(Condition.OBJECT, 1.0, 0.0, 0.0)
    corpus = generate_corpus(space[:20], spec, make_rng(0), inv)
    a = Agent(inv, 5)
    train_supervised(a, corpus, SlConfig(epochs=300, batch_size=20, learning_rate=0.02))
    for m, _ in corpus:
        assert speak(a, m).utterance == [m.agent, m.patient, inv.action_token(m.action)]
        assert predict_meaning(listen(a, [m.agent, m.patient, inv.action_token(m.action)])) == m


def test_overfit_listener_on_marked_example():
    alice, cake, eat = 0, 10, INV.action_token(0)
    spec = LanguageSpec(Condition.OBJECT, 1.0, 1.0, 1.0)
    meanings = [Meaning(0, alice, cake), Meaning(0, cake - 9, alice), Meaning(1, alice, cake)]
    corpus = generate_corpus(meanings, spec, make_rng(0), INV)
    assert corpus[0][1] == [alice, cake, INV.marker, eat]
    a = Agent(INV, 8)
    train_supervised(a, corpus, SlConfig(epochs=200, batch_size=3, learning_rate=0.02))
    assert predict_meaning(listen(a, [alice, cake, INV.marker, eat])) == Meaning(0, alice, cake)

import numpy as np
import pytest

from src.avaliacao_zeroshot import (EvalSplit, LabelBank, RetrievalResult, apply_split,
                                    build_label_bank, classify_zeroshot,
                                    retrieval_hit_at_k, retrieve_clouds, similaridades_zeroshot,
                                    validar_hierarquia_splits)
from src.codificadores import FrozenEncoderHandle, encode_image
from src.settings import Configuracao
from src.smo_dados import CorpusSpec, generate_synthetic_corpus, render_view

CATEGORIAS = ["cube", "slab", "ball", "ellipsoid", "can", "disk",
              "cone", "pyramid", "ring", "donut", "dumbbell", "table"]


def _banco(categorias, dim=4, seed=0):
    emb = np.random.default_rng(seed).normal(size=(len(categorias), dim))
    return LabelBank(categories=tuple(categorias), template=Configuracao.TEMPLATE_PROMPT,
                     embeddings=emb / np.linalg.norm(emb, axis=1, keepdims=True))


# ====================== BANCO DE RÓTULOS ======================

def test_prompt_do_template(enc_texto):
    """['airplane'] -> prompt 'a 3D representation of airplane'."""
    bank = build_label_bank(["airplane"], Configuracao.TEMPLATE_PROMPT, enc_texto)
    assert bank.prompt("airplane") == "a 3D representation of airplane"
    assert len(bank) == 1
    assert np.linalg.norm(bank.embeddings[0]) == pytest.approx(1.0)


def test_banco_duplicados(enc_texto):
    with pytest.raises(ValueError, match="duplicados"):
        build_label_bank(["cube", "cube"], Configuracao.TEMPLATE_PROMPT, enc_texto)


def test_template_sem_marcador(enc_texto):
    with pytest.raises(ValueError, match="Template sem o marcador"):
        build_label_bank(["cube"], "a 3D shape", enc_texto)


# ====================== CLASSIFICAÇÃO ======================

def test_consulta_igual_a_um_rotulo():
    """Embedding igual a um vetor do banco: essa categoria em 1º com similaridade 1."""
    bank = _banco(CATEGORIAS, dim=16)
    ranking = classify_zeroshot(bank.embeddings[4], bank, k=5)
    assert ranking[0][0] == "can"
    assert ranking[0][1] == pytest.approx(1.0, abs=1e-6)
    assert len(ranking) == 5


def test_k_igual_ao_banco_e_permutacao():
    bank = _banco(CATEGORIAS, dim=16)
    ranking = classify_zeroshot(np.ones(16), bank, k=len(bank))
    assert sorted(c for c, _ in ranking) == sorted(CATEGORIAS)
    assert [s for _, s in ranking] == sorted((s for _, s in ranking), reverse=True)


def test_empate_pelo_codigo():
    """Similaridades empatadas seguem a ordem do banco."""
    emb = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    bank = LabelBank(categories=("x", "y", "z"), template="[CLASS]", embeddings=emb)
    assert [c for c, _ in classify_zeroshot(np.array([1.0, 0.0]), bank, k=3)] == ["x", "z", "y"]


def test_k_invalido():
    with pytest.raises(ValueError, match="k deve estar"):
        classify_zeroshot(np.ones(4), _banco(["a", "b"]), k=3)


def test_classificacao_confere_forca_bruta():
    """Ranking zero-shot igual à ordenação exaustiva em 120 consultas x 12 classes."""
    rng = np.random.default_rng(0)
    bank = _banco(CATEGORIAS, dim=8, seed=1)
    consultas = rng.normal(size=(120, 8))
    # metade das consultas coincide com vetores do banco
    consultas[::2] = bank.embeddings[rng.integers(12, size=60)]
    for q in consultas:
        ranking = classify_zeroshot(q, bank, k=12)
        sims = [float(np.dot(q / np.linalg.norm(q), e)) for e in bank.embeddings]
        esperado = sorted(range(12), key=lambda j: (-sims[j], j))
        assert [c for c, _ in ranking] == [CATEGORIAS[j] for j in esperado]


def test_classificacao_invariante_a_escala():
    """Consulta multiplicada por c > 0 mantém ranking e similaridades."""
    bank = _banco(CATEGORIAS, dim=8, seed=2)
    q = np.random.default_rng(4).normal(size=8)
    base = classify_zeroshot(q, bank, k=12)
    for c in (1e-3, 0.5, 7.0, 1e4):
        escalado = classify_zeroshot(c * q, bank, k=12)
        assert [nome for nome, _ in escalado] == [nome for nome, _ in base]
        assert np.allclose([s for _, s in escalado], [s for _, s in base], atol=1e-12)


# ====================== SPLITS ======================

def _cenario():
    rng = np.random.default_rng(5)
    labels = [CATEGORIAS[i % 12] for i in range(48)]
    sims = rng.normal(size=(48, 12))
    return sims, labels


def test_split_vazio_igual_a_all():
    sims, labels = _cenario()
    a = apply_split(sims, labels, EvalSplit("All"), CATEGORIAS)
    b = apply_split(sims, labels, EvalSplit("Medium", ()), CATEGORIAS)
    assert (a["top1"], a["top5"], a["n"]) == (b["top1"], b["top5"], b["n"])


def test_split_uma_categoria_restante():
    """Excluir todas menos uma: top-1 trivialmente 1.0."""
    sims, labels = _cenario()
    relatorio = apply_split(sims, labels, EvalSplit("Hard", tuple(CATEGORIAS[1:])), CATEGORIAS)
    assert relatorio["top1"] == 1.0
    assert relatorio["n"] == 4


def test_split_top1_conhecido():
    sims = np.array([[0.9, 0.1, 0.0], [0.2, 0.8, 0.1], [0.7, 0.1, 0.3]])
    relatorio = apply_split(sims, ["a", "b", "c"], EvalSplit("All"), ["a", "b", "c"])
    assert relatorio["top1"] == pytest.approx(2 / 3)
    assert relatorio["top5"] == 1.0
    medium = apply_split(sims, ["a", "b", "c"], EvalSplit("Medium", ("a",)), ["a", "b", "c"])
    assert medium["n"] == 2
    assert medium["top1"] == 1.0


def test_split_sem_amostras():
    sims, labels = _cenario()
    with pytest.raises(ValueError, match="não deixa amostras"):
        apply_split(sims, labels, EvalSplit("Hard", tuple(CATEGORIAS)), CATEGORIAS)


def test_split_categoria_inexistente():
    sims, labels = _cenario()
    with pytest.raises(ValueError, match="inexistentes"):
        apply_split(sims, labels, EvalSplit("Medium", ("airplane",)), CATEGORIAS)


def test_split_nome_invalido():
    with pytest.raises(ValueError, match="Split inválido"):
        EvalSplit("Easy")


def test_hierarquia_medium_hard():
    validar_hierarquia_splits(EvalSplit("Medium", ("a",)), EvalSplit("Hard", ("a", "b")))
    with pytest.raises(ValueError, match="Hard não exclui"):
        validar_hierarquia_splits(EvalSplit("Medium", ("a", "c")), EvalSplit("Hard", ("a",)))


def test_similaridades_zeroshot():
    bank = _banco(["a", "b"], dim=3)
    sims = similaridades_zeroshot(np.vstack([bank.embeddings * 5.0]), bank)
    assert np.allclose(np.diag(sims), 1.0)


# ====================== RECUPERAÇÃO ======================

@pytest.fixture(scope="module")
def vista_consulta():
    cloud = generate_synthetic_corpus(CorpusSpec(1, 1, 1, 64, seed=0))[0].cloud
    return render_view(cloud, 0, 16, 16)


def test_galeria_de_um(vista_consulta, enc_imagem):
    resultado = retrieve_clouds(vista_consulta, [("unica", np.ones(8))], enc_imagem, k=1)
    assert resultado.ids == ["unica"]
    assert resultado.query_id == f"{vista_consulta.source_id}#0"


def test_consulta_igual_a_item(vista_consulta, enc_imagem):
    """Embedding da consulta presente na galeria: esse id em 1º com similaridade 1."""
    rng = np.random.default_rng(0)
    galeria = [(f"n{i}", rng.normal(size=8)) for i in range(10)]
    galeria.insert(6, ("alvo", encode_image(vista_consulta, enc_imagem).vec * 3.0))
    resultado = retrieve_clouds(vista_consulta, galeria, enc_imagem, k=3)
    assert resultado.ids[0] == "alvo"
    assert resultado.ranking[0][1] == pytest.approx(1.0, abs=1e-6)


def test_recuperacao_confere_forca_bruta(vista_consulta):
    """Ranking de recuperação igual à ordenação exaustiva (120 itens, com empates)."""
    enc = FrozenEncoderHandle("stub-image", 8, seed=0)
    rng = np.random.default_rng(2)
    vetores = rng.normal(size=(120, 8))
    vetores[60:] = vetores[:60]
    galeria = [(f"g{i:03d}", v) for i, v in enumerate(vetores)]
    resultado = retrieve_clouds(vista_consulta, galeria, enc, k=120)
    q = encode_image(vista_consulta, enc).vec
    sims = [float(np.dot(q, v / np.linalg.norm(v))) for v in vetores]
    esperado = sorted(range(120), key=lambda j: (-sims[j], j))
    assert resultado.ids == [f"g{j:03d}" for j in esperado]


def test_recuperacao_com_transformacao(vista_consulta, enc_imagem):
    """A transformação leva a consulta ao espaço da galeria antes do ranking."""
    galeria = [("a", np.array([1.0] + [0.0] * 7)), ("b", np.array([0.0, 1.0] + [0.0] * 6))]
    resultado = retrieve_clouds(vista_consulta, galeria, enc_imagem, k=2,
                                transformar=lambda vista, bruto: np.array([0.0, 1.0] + [0.0] * 6))
    assert resultado.ids == ["b", "a"]


def test_recuperacao_erros(vista_consulta, enc_imagem):
    with pytest.raises(ValueError, match="Galeria vazia"):
        retrieve_clouds(vista_consulta, [], enc_imagem)
    with pytest.raises(ValueError, match="duplicados"):
        retrieve_clouds(vista_consulta, [("a", np.ones(8)), ("a", np.ones(8))], enc_imagem, k=1)


def test_resultado_ordenado():
    with pytest.raises(ValueError, match="não crescentes"):
        RetrievalResult(query_id="q", ranking=(("a", 0.1), ("b", 0.5)))
    assert RetrievalResult("q", (("a", 0.5), ("b", 0.1))).to_dict()["ranking"][0] == \
        {"id": "a", "similaridade": 0.5}


def test_hit_at_k():
    resultados = [RetrievalResult("q1", (("a", 0.9), ("b", 0.5), ("c", 0.1))),
                  RetrievalResult("q2", (("d", 0.9), ("e", 0.5), ("f", 0.1)))]
    assert retrieval_hit_at_k(resultados, [{"c"}, {"x"}], k=3) == 0.5
    assert retrieval_hit_at_k(resultados, [{"c"}, {"x"}], k=2) == 0.0

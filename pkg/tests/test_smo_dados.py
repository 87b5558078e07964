import itertools

import numpy as np
import pytest

from src.models import PointCloud, circular_angle_difference
from src.smo_dados import (AmostragemInviavelError, CorpusSpec, assemble_triplets,
                           build_category_tree, capacidade_janela, dividir_corpus,
                           generate_synthetic_corpus, normalize_cloud,
                           pares_do_corpus, profundidade_maxima, random_view_sample, render_view,
                           render_candidate_views, renderizar_corpus, sample_points,
                           within_view_sample)


# ====================== CORPUS ======================

def test_corpus_unitario():
    """spec(1, 1, 1, 64) gera uma nuvem com 64 pontos dentro da esfera unitária."""
    corpus = generate_synthetic_corpus(CorpusSpec(1, 1, 1, 64, seed=7))
    assert len(corpus) == 1
    cloud = corpus[0].cloud
    assert cloud.n_points == 64
    assert np.linalg.norm(cloud.points, axis=1).max() <= 1 + 1e-9
    assert cloud.esta_normalizada


def test_corpus_contagem():
    """6 pais x 2 subs x 10 amostras = 120 amostras em 12 subcategorias."""
    corpus = generate_synthetic_corpus(CorpusSpec(6, 2, 10, 32, seed=0))
    assert len(corpus) == 120
    assert len({a.sub for a in corpus}) == 12
    assert len({a.parent for a in corpus}) == 6
    assert len({a.cloud.id for a in corpus}) == 120


def test_corpus_deterministico():
    """Mesma especificação e semente produzem arrays idênticos bit a bit."""
    spec = CorpusSpec(2, 2, 2, 48, seed=11)
    a, b = generate_synthetic_corpus(spec), generate_synthetic_corpus(spec)
    for x, y in zip(a, b):
        assert x.cloud.id == y.cloud.id
        assert np.array_equal(x.cloud.points, y.cloud.points)


def test_corpus_subcategorias_distintas():
    """Subcategorias do mesmo pai são famílias geométricas diferentes."""
    corpus = generate_synthetic_corpus(CorpusSpec(1, 2, 1, 256, seed=0))
    cubo, placa = corpus[0].cloud.points, corpus[1].cloud.points
    assert (corpus[0].sub, corpus[1].sub) == ("cube", "slab")
    assert np.ptp(placa[:, 2]) < 0.6 * np.ptp(cubo[:, 2])


def test_corpus_spec_invalida():
    with pytest.raises(ValueError, match="< 8"):
        CorpusSpec(1, 1, 1, 4, seed=0)
    with pytest.raises(ValueError, match="categorias pai"):
        CorpusSpec(7, 1, 1, 64, seed=0)
    with pytest.raises(ValueError, match="subcategorias por pai"):
        CorpusSpec(1, 4, 1, 64, seed=0)


def test_normalize_cloud():
    pts = normalize_cloud(np.array([[10.0, 0, 0], [12.0, 0, 0], [11.0, 3.0, 0]]))
    assert np.allclose(pts.mean(axis=0), 0.0, atol=1e-12)
    assert np.linalg.norm(pts, axis=1).max() == pytest.approx(1.0)


def test_sample_points_permutacao():
    """n = N_c devolve uma permutação dos pontos de entrada."""
    cloud = generate_synthetic_corpus(CorpusSpec(1, 1, 1, 32, seed=1))[0].cloud
    amostra = sample_points(cloud, 32, seed=5)
    assert {tuple(p) for p in amostra.points} == {tuple(p) for p in cloud.points}


def test_sample_points_reprodutivel():
    cloud = generate_synthetic_corpus(CorpusSpec(1, 1, 1, 4096, seed=1))[0].cloud
    a, b = sample_points(cloud, 1024, seed=9), sample_points(cloud, 1024, seed=9)
    assert a.n_points == 1024
    assert np.array_equal(a.points, b.points)


def test_sample_points_com_reposicao():
    """n = 8 de N_c = 4: 8 pontos, todos presentes na entrada."""
    cloud = PointCloud(points=np.arange(12.0).reshape(4, 3), id="q")
    amostra = sample_points(cloud, 8, seed=0)
    assert amostra.n_points == 8
    originais = {tuple(p) for p in cloud.points}
    assert all(tuple(p) in originais for p in amostra.points)


def test_dividir_corpus(corpus_pequeno):
    """Subcategorias não vistas ficam fora de treino e validação."""
    treino, validacao, nao_vistas = dividir_corpus(corpus_pequeno, 0.34, ["slab"], seed=0)
    assert {a.sub for a in nao_vistas} == {"slab"}
    assert "slab" not in {a.sub for a in treino + validacao}
    assert len(treino) + len(validacao) + len(nao_vistas) == len(corpus_pequeno)
    assert len(validacao) == 3
    with pytest.raises(ValueError, match="ausentes do corpus"):
        dividir_corpus(corpus_pequeno, 0.2, ["table"])


# ====================== RENDERIZAÇÃO ======================

def test_angulos_das_vistas():
    """views[k].angle_deg = 12k para k = 0..29."""
    cloud = generate_synthetic_corpus(CorpusSpec(1, 1, 1, 64, seed=0))[0].cloud
    vistas = render_candidate_views(cloud, 8, 8)
    assert [v.angle_deg for v in vistas.views] == [12.0 * k for k in range(30)]
    assert all(v.source_id == cloud.id for v in vistas.views)


def test_ponto_unico_ocupa_uma_celula():
    """Um ponto na origem projeta exatamente uma célula em cada vista."""
    cloud = PointCloud(points=[[0.0, 0.0, 0.0]], id="p")
    for vista in render_candidate_views(cloud, 8, 8).views:
        assert np.count_nonzero(vista.depth) == 1


def test_nuvem_simetrica_repete_profundidade():
    """
    Nuvem simétrica por giro de 180° no eixo vertical: a vista k e a vista
    k + 15 enxergam o mesmo conjunto de pontos projetados.
    """
    cloud = PointCloud(points=[[0.3, 0.45, 0.1], [-0.3, -0.45, 0.1]], id="sim")
    for k in range(15):
        a, b = render_view(cloud, k, 16, 16), render_view(cloud, k + 15, 16, 16)
        assert np.allclose(a.depth, b.depth, atol=1e-6)
        assert np.allclose(a.rgb, b.rgb, atol=1e-6)


def test_ponto_mais_proximo_vence():
    """Dois pontos no mesmo pixel: fica o mais próximo, com a profundidade mínima."""
    cloud = PointCloud(points=[[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0]], id="par")
    vista = render_view(cloud, 0, 8, 8)
    assert np.count_nonzero(vista.depth) == 1
    assert vista.depth.max() == pytest.approx(0.05)


def test_render_dimensao_minima():
    cloud = PointCloud(points=[[0.0, 0.0, 0.0]], id="p")
    with pytest.raises(ValueError, match=">= 8"):
        render_view(cloud, 0, 4, 8)


def test_renderizar_corpus_independe_de_workers(corpus_pequeno):
    um = renderizar_corpus(corpus_pequeno[:3], 8, 8, workers=1)
    tres = renderizar_corpus(corpus_pequeno[:3], 8, 8, workers=3)
    for cid in um:
        for a, b in zip(um[cid].views, tres[cid].views):
            assert np.array_equal(a.depth, b.depth)
    assert profundidade_maxima(um.values()) > 0.05


# ====================== AMOSTRAGEM DE VISTAS ======================

def test_capacidade_janela():
    assert capacidade_janela(60.0) == 5
    assert capacidade_janela(61.0) == 6
    assert capacidade_janela(12.0) == 1
    assert capacidade_janela(360.0) == 30


def test_amostragem_v1(candidatos_pequenos):
    """v = 1: uma única vista, restrição vacuamente satisfeita."""
    cands = next(iter(candidatos_pequenos.values()))
    for omega in (12.0, 60.0, 360.0):
        assert len(within_view_sample(cands, 1, omega, seed=3)) == 1


def test_amostragem_dentro_da_janela(candidatos_pequenos):
    """v = 4, ω = 60°: 1000 sorteios sem nenhuma diferença par a par >= 60°."""
    cands = next(iter(candidatos_pequenos.values()))
    violacoes = 0
    for seed in range(1000):
        vistas = within_view_sample(cands, 4, 60.0, seed)
        assert len({v.angle_index for v in vistas}) == 4
        violacoes += sum(
            1 for a, b in itertools.combinations(vistas, 2)
            if min(abs(a.angle_deg - b.angle_deg), 360 - abs(a.angle_deg - b.angle_deg)) >= 60.0)
    assert violacoes == 0


def test_amostragem_inviavel(candidatos_pequenos):
    """v = 6, ω = 60° não cabe em janela aberta com passo de 12°."""
    cands = next(iter(candidatos_pequenos.values()))
    with pytest.raises(AmostragemInviavelError, match=r"v=6.*omega=60\.0"):
        within_view_sample(cands, 6, 60.0, seed=0)


def test_amostragem_reprodutivel(candidatos_pequenos):
    cands = next(iter(candidatos_pequenos.values()))
    a = [v.angle_index for v in within_view_sample(cands, 3, 60.0, seed=42)]
    b = [v.angle_index for v in within_view_sample(cands, 3, 60.0, seed=42)]
    assert a == b


def test_amostragem_aleatoria(candidatos_pequenos):
    cands = next(iter(candidatos_pequenos.values()))
    vistas = random_view_sample(cands, 5, seed=1)
    assert len({v.angle_index for v in vistas}) == 5
    with pytest.raises(ValueError, match="v deve estar"):
        random_view_sample(cands, 31, seed=1)


# ====================== ÁRVORE E TRIPLAS ======================

def test_arvore_sub_ausente_herda_pai():
    """[('bed', 'bunk'), ('bed', None)] -> filhos de bed = ['bunk', 'bed']."""
    tree = build_category_tree([("bed", "bunk"), ("bed", None)])
    assert list(tree.children["bed"]) == ["bunk", "bed"]


def test_arvore_codigos_primeira_ocorrencia():
    tree = build_category_tree([("airplane", "jet"), ("airplane", "bomber")])
    assert tree.parent_code["airplane"] == 0
    assert tree.sub_code == {"jet": 0, "bomber": 1}


def test_arvore_pares_repetidos():
    tree = build_category_tree([("bed", "bunk"), ("bed", "bunk")])
    assert list(tree.children["bed"]) == ["bunk"]


def test_arvore_sub_em_dois_pais():
    with pytest.raises(ValueError, match="aparece sob dois pais"):
        build_category_tree([("a", "x"), ("b", "x")])


def test_triplas_uma_por_amostra(corpus_pequeno, arvore_pequena, candidatos_pequenos):
    triplas = assemble_triplets(corpus_pequeno, arvore_pequena, 2, 60.0, seed=0,
                                candidatos=candidatos_pequenos)
    assert len(triplas) == len(corpus_pequeno)
    for tripla in triplas:
        assert len(tripla.views) == 2
        assert max(circular_angle_difference(a.angle_deg, b.angle_deg)
                   for a, b in itertools.combinations(tripla.views, 2)) < 60.0
        assert arvore_pequena.contem(tripla.parent, tripla.sub)


def test_triplas_reprodutiveis(corpus_pequeno, arvore_pequena, candidatos_pequenos):
    """Mesma semente seleciona as mesmas vistas; outra semente redesenha."""
    def indices(seed):
        return [t.angle_indices for t in assemble_triplets(
            corpus_pequeno, arvore_pequena, 2, 60.0, seed, candidatos=candidatos_pequenos)]
    assert indices(5) == indices(5)
    assert indices(5) != indices(6)


def test_triplas_inviaveis_falham_antes_de_renderizar(corpus_pequeno, arvore_pequena):
    with pytest.raises(AmostragemInviavelError):
        assemble_triplets(corpus_pequeno, arvore_pequena, 6, 60.0, seed=0)


def test_pares_do_corpus(corpus_pequeno):
    pares = pares_do_corpus(corpus_pequeno)
    assert pares[0] == ("box", "cube")
    assert len(pares) == len(corpus_pequeno)

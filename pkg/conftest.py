"""
Fixtures compartilhadas dos testes: corpus pequeno, árvore, vistas
candidatas e codificadores congelados
"""
import pytest

from src.codificadores import FrozenEncoderHandle
from src.config_execucao import RunConfig
from src.settings import fixar_semente
from src.smo_dados import (CorpusSpec, build_category_tree, generate_synthetic_corpus,
                           pares_do_corpus, render_candidate_views)


@pytest.fixture(autouse=True)
def semente_global():
    fixar_semente(0)


@pytest.fixture(scope="session")
def corpus_pequeno():
    """2 pais x 2 subs x 3 amostras, 64 pontos"""
    return generate_synthetic_corpus(CorpusSpec(parents=2, subs_per_parent=2, samples_per_sub=3,
                                                n_points=64, seed=3))


@pytest.fixture(scope="session")
def arvore_pequena(corpus_pequeno):
    return build_category_tree(pares_do_corpus(corpus_pequeno))


@pytest.fixture(scope="session")
def candidatos_pequenos(corpus_pequeno):
    return {a.cloud.id: render_candidate_views(a.cloud, 16, 16) for a in corpus_pequeno}


@pytest.fixture(scope="session")
def enc_texto():
    return FrozenEncoderHandle("stub-text", 8, seed=0)


@pytest.fixture(scope="session")
def enc_imagem():
    return FrozenEncoderHandle("stub-image", 8, seed=0)


@pytest.fixture
def config_minima(tmp_path):
    """Execução mínima: 2 pais x 2 subs x 4 amostras, 32 pontos, 2 épocas"""
    return RunConfig(parents=2, subs_per_parent=2, samples_per_sub=4, n_points=32, image_size=16,
                     fracao_validacao=0.25, subs_nao_vistas=(), views=2, dim=8, batch_size=4,
                     epochs=2, n_tokens=4, llm_records=4, llm_steps=3, llm_lm_pretrain_steps=2,
                     lm_largura=16, lm_blocos=1, output_dir=str(tmp_path / "execucao"))

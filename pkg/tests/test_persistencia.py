import numpy as np
import pytest
import torch

from src.models import PointCloud
from src.persistencia import (CheckpointAusenteError, FormatoArquivoError, append_jsonl,
                              caminho_checkpoint, read_checkpoint, read_embedding_table, read_jsonl,
                              read_point_file, read_split, read_tree, read_triplet_manifest,
                              read_view_file, ultimo_checkpoint, write_checkpoint,
                              write_embedding_table, write_jsonl, write_point_file, write_tree,
                              write_triplet_manifest, write_view_file)
from src.smo_dados import assemble_triplets, render_view


# ====================== PCV1 ======================

def test_arquivo_de_pontos(tmp_path):
    cloud = PointCloud(points=np.random.default_rng(0).uniform(-1, 1, size=(50, 3)), id="n1")
    caminho = write_point_file(tmp_path / "n1.pcv", cloud)
    dados = caminho.read_bytes()
    assert dados[:4] == b"PCV1"
    assert len(dados) == 8 + 50 * 12
    lida = read_point_file(caminho)
    assert lida.id == "n1"
    assert np.allclose(lida.points, cloud.points, atol=1e-6)


def test_arquivo_de_pontos_invalido(tmp_path):
    caminho = write_point_file(tmp_path / "a.pcv", PointCloud(points=[[0.0, 0.0, 0.0]], id="a"))
    dados = caminho.read_bytes()
    caminho.write_bytes(b"XXXX" + dados[4:])
    with pytest.raises(FormatoArquivoError, match="cabeçalho"):
        read_point_file(caminho)
    caminho.write_bytes(dados[:-4])
    with pytest.raises(FormatoArquivoError, match="esperado 20"):
        read_point_file(caminho)


# ====================== EMB1 ======================

def test_tabela_de_embeddings(tmp_path):
    tabela = {"cube": [1.0, 0.0, 0.5], "ball#3": [0.25, -1.0, 2.0], "cubo-ç": [0.0, 0.0, 1.0]}
    caminho = write_embedding_table(tmp_path / "t.emb", tabela)
    lida = read_embedding_table(caminho)
    assert list(lida) == list(tabela)
    for chave, vetor in tabela.items():
        assert np.array_equal(lida[chave], np.asarray(vetor))


def test_tabela_invalida(tmp_path):
    with pytest.raises(ValueError, match="dimensões diferentes"):
        write_embedding_table(tmp_path / "x.emb", {"a": [1.0], "b": [1.0, 2.0]})
    caminho = write_embedding_table(tmp_path / "t.emb", {"a": [1.0, 2.0], "b": [3.0, 4.0]})
    dados = caminho.read_bytes()
    caminho.write_bytes(dados + b"\x00")
    with pytest.raises(FormatoArquivoError, match="bytes excedentes"):
        read_embedding_table(caminho)
    caminho.write_bytes(dados[:-3])
    with pytest.raises(FormatoArquivoError, match="truncad"):
        read_embedding_table(caminho)


# ====================== JMCK ======================

def _tensores():
    torch.manual_seed(0)
    return {"modelo.peso": torch.randn(3, 4), "modelo.vies": torch.randn(4), "escalar": torch.tensor(2.5)}


def test_checkpoint(tmp_path):
    tensores = _tensores()
    caminho = write_checkpoint(tmp_path / "c.jmck", tensores, {"epoca": 3, "semente": 7})
    lidos, metadados = read_checkpoint(caminho)
    assert list(lidos) == list(tensores)
    for nome, t in tensores.items():
        assert torch.equal(lidos[nome], t)
    assert metadados == {"epoca": 3, "semente": 7}
    assert not caminho.with_suffix(".jmck.tmp").exists()


def test_checkpoint_corrompido(tmp_path):
    caminho = write_checkpoint(tmp_path / "c.jmck", _tensores(), {})
    dados = caminho.read_bytes()
    caminho.write_bytes(dados[:-4])
    with pytest.raises(FormatoArquivoError, match="truncad"):
        read_checkpoint(caminho)
    caminho.write_bytes(dados[:4] + (2).to_bytes(4, "little") + dados[8:])
    with pytest.raises(FormatoArquivoError, match="versão 2"):
        read_checkpoint(caminho)
    caminho.write_bytes(b"JMCX" + dados[4:])
    with pytest.raises(FormatoArquivoError, match="cabeçalho"):
        read_checkpoint(caminho)
    caminho.write_bytes(dados + b"\x01\x02")
    with pytest.raises(FormatoArquivoError, match="bytes excedentes"):
        read_checkpoint(caminho)


def test_checkpoint_ausente(tmp_path):
    with pytest.raises(CheckpointAusenteError):
        read_checkpoint(tmp_path / "nada.jmck")
    with pytest.raises(CheckpointAusenteError, match="Nenhum checkpoint"):
        ultimo_checkpoint(tmp_path)


def test_ultimo_checkpoint(tmp_path):
    for epoca in (0, 10, 2):
        write_checkpoint(caminho_checkpoint(tmp_path, epoca), _tensores(), {"epoca": epoca})
    assert ultimo_checkpoint(tmp_path).name == "epoca_0010.jmck"


# ====================== ARQUIVOS ESTRUTURADOS ======================

def test_manifesto_de_triplas(tmp_path, corpus_pequeno, arvore_pequena, candidatos_pequenos):
    triplas = assemble_triplets(corpus_pequeno, arvore_pequena, 2, 60.0, seed=0,
                                candidatos=candidatos_pequenos)
    caminho = write_triplet_manifest(tmp_path, triplas)
    df = read_triplet_manifest(caminho)
    assert len(df) == len(triplas)
    primeira = df.iloc[0]
    assert primeira["id"] == triplas[0].cloud.id
    assert list(primeira["view_angle_indices"]) == triplas[0].angle_indices
    nuvem = read_point_file(tmp_path / primeira["points_path"])
    assert nuvem.n_points == triplas[0].cloud.n_points


def test_manifesto_sem_campos(tmp_path):
    caminho = tmp_path / "triplets.jsonl"
    caminho.write_text('{"id": "a", "parent": "box"}\n', encoding="utf-8")
    with pytest.raises(FormatoArquivoError, match="campos ausentes"):
        read_triplet_manifest(caminho)


def test_arvore_em_json(tmp_path, arvore_pequena):
    lida = read_tree(write_tree(tmp_path / "tree.json", arvore_pequena))
    assert lida.parents == arvore_pequena.parents
    assert lida.sub_code == arvore_pequena.sub_code
    (tmp_path / "ruim.json").write_text('{"parents": []}', encoding="utf-8")
    with pytest.raises(FormatoArquivoError, match="árvore sem"):
        read_tree(tmp_path / "ruim.json")


def test_split_em_json(tmp_path):
    (tmp_path / "hard.json").write_text('{"name": "Hard", "excluded": ["cube", "ball"]}',
                                        encoding="utf-8")
    split = read_split(tmp_path / "hard.json")
    assert split.name == "Hard"
    assert split.excluded == ("cube", "ball")


def test_jsonl_somente_acrescenta(tmp_path):
    caminho = tmp_path / "metricas.jsonl"
    append_jsonl(caminho, [{"epoca": 1, "perda": 0.5}])
    append_jsonl(caminho, [{"epoca": 2, "perda": 0.4}])
    assert [r["epoca"] for r in read_jsonl(caminho)] == [1, 2]
    write_jsonl(caminho, [{"epoca": 9}])
    assert read_jsonl(caminho) == [{"epoca": 9}]


def test_arquivo_de_vista(tmp_path):
    vista = render_view(PointCloud(points=[[0.0, 0.0, 0.0], [0.2, 0.1, 0.3]], id="v"), 7, 8, 8)
    lida = read_view_file(write_view_file(tmp_path / "q.npz", vista))
    assert lida.angle_index == 7
    assert lida.angle_deg == 84.0
    assert lida.source_id == "v"
    assert np.array_equal(lida.depth, vista.depth)
    (tmp_path / "lixo.npz").write_bytes(b"nada aqui")
    with pytest.raises(FormatoArquivoError, match="ilegível"):
        read_view_file(tmp_path / "lixo.npz")

"""
PERSISTÊNCIA - Formatos de arquivo do projeto
Nuvens PCV1, tabelas de embeddings EMB1, checkpoints JMCK,
manifesto de triplas, árvore de categorias, splits e conversas
Versão 1.0
"""
import json
import struct
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch

from src.models import CategoryTree, PointCloud, TripletSample, ViewImage
from src.settings import Configuracao

Caminho = Union[str, Path]


class FormatoArquivoError(ValueError):
    """Cabeçalho, versão ou tamanho inválido em arquivo binário"""


class CheckpointAusenteError(FileNotFoundError):
    """Nenhum checkpoint encontrado no diretório da execução"""


def _ler_cabecalho(dados: bytes, magico: bytes, caminho: Path) -> None:
    if dados[:4] != magico:
        raise FormatoArquivoError(
            f"{caminho.name}: cabeçalho {dados[:4]!r} diferente de {magico!r}")


# ====================== NUVENS DE PONTOS (PCV1) ======================

def write_point_file(caminho: Caminho, cloud: PointCloud) -> Path:
    """Cabeçalho 'PCV1' + uint32 N, seguido de N x 3 float32 little-endian"""
    caminho = Path(caminho)
    caminho.parent.mkdir(parents=True, exist_ok=True)
    corpo = np.asarray(cloud.points, dtype="<f4").tobytes()
    caminho.write_bytes(Configuracao.MAGICO_PONTOS + struct.pack("<I", cloud.n_points) + corpo)
    return caminho


def read_point_file(caminho: Caminho, cloud_id: Optional[str] = None) -> PointCloud:
    caminho = Path(caminho)
    dados = caminho.read_bytes()
    _ler_cabecalho(dados, Configuracao.MAGICO_PONTOS, caminho)
    (n,) = struct.unpack_from("<I", dados, 4)
    esperado = 8 + n * 12
    if len(dados) != esperado:
        raise FormatoArquivoError(f"{caminho.name}: {len(dados)} bytes, esperado {esperado}")
    pontos = np.frombuffer(dados, dtype="<f4", offset=8).reshape(n, 3).astype(np.float64)
    return PointCloud(points=pontos, id=cloud_id if cloud_id is not None else caminho.stem)


# ====================== TABELAS DE EMBEDDINGS (EMB1) ======================

def write_embedding_table(caminho: Caminho, tabela: Mapping[str, np.ndarray]) -> Path:
    """
    Cabeçalho 'EMB1', uint32 contagem, uint32 D; por entrada: uint32 tamanho
    da chave, chave UTF-8 e D float32 little-endian.
    """
    caminho = Path(caminho)
    vetores = {k: np.asarray(v, dtype=np.float64).reshape(-1) for k, v in tabela.items()}
    dims = {v.shape[0] for v in vetores.values()}
    if len(dims) > 1:
        raise ValueError(f"Vetores com dimensões diferentes: {sorted(dims)}")
    dim = dims.pop() if dims else 0
    partes = [Configuracao.MAGICO_EMBEDDINGS, struct.pack("<II", len(vetores), dim)]
    for chave, vetor in vetores.items():
        chave_bytes = chave.encode("utf-8")
        partes.append(struct.pack("<I", len(chave_bytes)))
        partes.append(chave_bytes)
        partes.append(vetor.astype("<f4").tobytes())
    caminho.parent.mkdir(parents=True, exist_ok=True)
    caminho.write_bytes(b"".join(partes))
    return caminho


def read_embedding_table(caminho: Caminho) -> Dict[str, np.ndarray]:
    caminho = Path(caminho)
    dados = caminho.read_bytes()
    _ler_cabecalho(dados, Configuracao.MAGICO_EMBEDDINGS, caminho)
    contagem, dim = struct.unpack_from("<II", dados, 4)
    pos = 12
    tabela: Dict[str, np.ndarray] = {}
    try:
        for _ in range(contagem):
            (tamanho,) = struct.unpack_from("<I", dados, pos)
            pos += 4
            chave = dados[pos:pos + tamanho].decode("utf-8")
            pos += tamanho
            vetor = np.frombuffer(dados, dtype="<f4", count=dim, offset=pos).astype(np.float64)
            pos += 4 * dim
            tabela[chave] = vetor
    except (struct.error, ValueError) as exc:
        raise FormatoArquivoError(f"{caminho.name}: tabela truncada ({exc})") from exc
    if pos != len(dados):
        raise FormatoArquivoError(f"{caminho.name}: {len(dados) - pos} bytes excedentes")
    return tabela


# ====================== CHECKPOINTS (JMCK) ======================

def write_checkpoint(caminho: Caminho, tensores: Mapping[str, torch.Tensor],
                     metadados: Mapping[str, Any]) -> Path:
    """
    Cabeçalho 'JMCK' + versão uint32 + uint32 tamanho do manifesto JSON +
    manifesto (nomes, formas, metadados) + payloads float32 little-endian
    na ordem do manifesto.
    """
    caminho = Path(caminho)
    nomes = list(tensores)
    manifesto = {
        "tensores": [{"nome": n, "forma": list(tensores[n].shape)} for n in nomes],
        "metadados": dict(metadados),
    }
    manifesto_bytes = json.dumps(manifesto, sort_keys=True).encode("utf-8")
    partes = [Configuracao.MAGICO_CHECKPOINT,
              struct.pack("<II", Configuracao.VERSAO_CHECKPOINT, len(manifesto_bytes)),
              manifesto_bytes]
    for nome in nomes:
        t = tensores[nome].detach().to("cpu", torch.float32).contiguous()
        partes.append(t.numpy().astype("<f4").tobytes())
    caminho.parent.mkdir(parents=True, exist_ok=True)
    temporario = caminho.with_suffix(caminho.suffix + ".tmp")
    temporario.write_bytes(b"".join(partes))
    temporario.replace(caminho)
    return caminho


def read_checkpoint(caminho: Caminho) -> Tuple[Dict[str, torch.Tensor], Dict[str, Any]]:
    caminho = Path(caminho)
    if not caminho.exists():
        raise CheckpointAusenteError(f"Checkpoint não encontrado: {caminho}")
    dados = caminho.read_bytes()
    _ler_cabecalho(dados, Configuracao.MAGICO_CHECKPOINT, caminho)
    versao, tamanho = struct.unpack_from("<II", dados, 4)
    if versao != Configuracao.VERSAO_CHECKPOINT:
        raise FormatoArquivoError(f"{caminho.name}: versão {versao} não suportada")
    manifesto = json.loads(dados[12:12 + tamanho].decode("utf-8"))
    pos = 12 + tamanho
    tensores: Dict[str, torch.Tensor] = {}
    for item in manifesto["tensores"]:
        forma = tuple(item["forma"])
        n = int(np.prod(forma, dtype=np.int64))
        if pos + 4 * n > len(dados):
            raise FormatoArquivoError(f"{caminho.name}: payload truncado em {item['nome']!r}")
        arr = np.frombuffer(dados, dtype="<f4", count=n, offset=pos).reshape(forma)
        tensores[item["nome"]] = torch.from_numpy(arr.astype(np.float32))
        pos += 4 * n
    if pos != len(dados):
        raise FormatoArquivoError(f"{caminho.name}: {len(dados) - pos} bytes excedentes")
    return tensores, manifesto["metadados"]


def ultimo_checkpoint(diretorio: Caminho) -> Path:
    """Checkpoint de maior época em <diretorio>/checkpoints"""
    candidatos = sorted(Path(diretorio, "checkpoints").glob("epoca_*.jmck"))
    if not candidatos:
        raise CheckpointAusenteError(f"Nenhum checkpoint em {Path(diretorio, 'checkpoints')}")
    return candidatos[-1]


def caminho_checkpoint(diretorio: Caminho, epoca: int) -> Path:
    return Path(diretorio, "checkpoints", f"epoca_{epoca:04d}.jmck")


# ====================== MANIFESTO DE TRIPLAS ======================

def write_triplet_manifest(diretorio: Caminho, triplas: Sequence[TripletSample]) -> Path:
    """
    Um registro JSON por linha {id, parent, sub, points_path, view_angle_indices};
    as nuvens vão para <diretorio>/pontos/<id>.pcv.
    """
    diretorio = Path(diretorio)
    registros = []
    for t in triplas:
        relativo = Path("pontos", f"{t.cloud.id}.pcv")
        write_point_file(diretorio / relativo, t.cloud)
        registros.append({"id": t.cloud.id, "parent": t.parent, "sub": t.sub,
                          "points_path": relativo.as_posix(),
                          "view_angle_indices": t.angle_indices})
    caminho = diretorio / "triplets.jsonl"
    pd.DataFrame(registros, columns=["id", "parent", "sub", "points_path", "view_angle_indices"]) \
        .to_json(caminho, orient="records", lines=True, force_ascii=False)
    return caminho


def read_triplet_manifest(caminho: Caminho) -> pd.DataFrame:
    caminho = Path(caminho)
    df = pd.read_json(caminho, orient="records", lines=True, dtype={"id": str, "parent": str, "sub": str})
    faltando = {"id", "parent", "sub", "points_path", "view_angle_indices"} - set(df.columns)
    if faltando:
        raise FormatoArquivoError(f"{caminho.name}: campos ausentes {sorted(faltando)}")
    return df


# ====================== ARQUIVOS ESTRUTURADOS ======================

def _escrever_json(caminho: Caminho, dados: Any) -> Path:
    caminho = Path(caminho)
    caminho.parent.mkdir(parents=True, exist_ok=True)
    caminho.write_text(json.dumps(dados, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
                       encoding="utf-8")
    return caminho


def _ler_json(caminho: Caminho) -> Any:
    return json.loads(Path(caminho).read_text(encoding="utf-8"))


def write_tree(caminho: Caminho, tree: CategoryTree) -> Path:
    return _escrever_json(caminho, tree.to_dict())


def read_tree(caminho: Caminho) -> CategoryTree:
    dados = _ler_json(caminho)
    if not {"parents", "children"} <= set(dados):
        raise FormatoArquivoError(f"{Path(caminho).name}: árvore sem 'parents'/'children'")
    return CategoryTree.from_dict(dados)


def read_split(caminho: Caminho):
    """Arquivo {name, excluded: [...]} -> EvalSplit"""
    from src.avaliacao_zeroshot import EvalSplit
    dados = _ler_json(caminho)
    return EvalSplit(name=dados["name"], excluded=tuple(dados.get("excluded", ())))


def write_report(caminho: Caminho, relatorio: Mapping[str, Any]) -> Path:
    return _escrever_json(caminho, dict(relatorio))


def read_report(caminho: Caminho) -> Dict[str, Any]:
    return _ler_json(caminho)


def append_jsonl(caminho: Caminho, registros: Iterable[Mapping[str, Any]]) -> Path:
    """Acrescenta registros (append-only), uma linha JSON com chaves ordenadas por registro"""
    caminho = Path(caminho)
    caminho.parent.mkdir(parents=True, exist_ok=True)
    with caminho.open("a", encoding="utf-8") as f:
        for registro in registros:
            f.write(json.dumps(dict(registro), ensure_ascii=False, sort_keys=True) + "\n")
    return caminho


def write_jsonl(caminho: Caminho, registros: Iterable[Mapping[str, Any]]) -> Path:
    caminho = Path(caminho)
    if caminho.exists():
        caminho.unlink()
    return append_jsonl(caminho, registros)


def read_jsonl(caminho: Caminho) -> List[Dict[str, Any]]:
    linhas = Path(caminho).read_text(encoding="utf-8").splitlines()
    return [json.loads(linha) for linha in linhas if linha.strip()]


# ====================== VISTAS DE CONSULTA ======================

def write_view_file(caminho: Caminho, vista: ViewImage) -> Path:
    """Vista em .npz (rgb, depth, angle_index, source_id)"""
    caminho = Path(caminho)
    caminho.parent.mkdir(parents=True, exist_ok=True)
    with caminho.open("wb") as f:
        np.savez(f, rgb=vista.rgb, depth=vista.depth, angle_index=np.int64(vista.angle_index),
                 source_id=np.array(vista.source_id))
    return caminho


def read_view_file(caminho: Caminho) -> ViewImage:
    caminho = Path(caminho)
    try:
        with np.load(caminho, allow_pickle=False) as dados:
            indice = int(dados["angle_index"])
            return ViewImage(rgb=dados["rgb"], depth=dados["depth"], angle_index=indice,
                             angle_deg=Configuracao.angulo_da_vista(indice),
                             source_id=str(dados["source_id"]))
    except (OSError, KeyError, ValueError) as exc:
        raise FormatoArquivoError(f"Imagem de consulta ilegível {caminho}: {exc}") from exc

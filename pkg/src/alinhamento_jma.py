"""
ALINHAMENTO MULTIMODAL CONJUNTO (JMA)
Feature conjunta condicionada ao texto, perda contrastiva simétrica,
objetivo ponderado com classificação hierárquica e passo de treino
Versão 1.0
"""
import hashlib
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, MutableMapping, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from src.codificadores import (Embedding, EmbeddingsVista, FrozenEncoderHandle, PointEncoder,
                               ViewFeatureSet, depth_bucket, encode_image, encode_text)
from src.models import CategoryTree, TripletSample
from src.settings import Configuracao, Logger

MODOS_ALINHAMENTO = ("jma", "independente")


class PerdaNaoFinitaError(RuntimeError):
    """Perda NaN/inf durante o treino"""


# ====================== TIPOS ======================

@dataclass(frozen=True, eq=False)
class JointFeature:
    """h^J: combinação convexa das features de vista"""
    vec: torch.Tensor  # [D]
    weights: torch.Tensor  # [V]

    def __post_init__(self):
        w = self.weights.detach()
        if torch.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-6:
            raise ValueError("Pesos da feature conjunta devem ser não negativos e somar 1")

    def recompor(self, views: torch.Tensor) -> torch.Tensor:
        """Recalcula Σ_v w_v · view_v a partir das linhas de origem"""
        return (self.weights.unsqueeze(1) * views).sum(dim=0)


@dataclass(frozen=True)
class LossWeights:
    """Pesos λ do objetivo e temperatura da perda contrastiva"""
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    temperature: float = Configuracao.TEMPERATURA_PADRAO
    lambda_cls: float = 1.0

    def __post_init__(self):
        for nome in ("lambda1", "lambda2", "lambda3", "lambda_cls"):
            valor = getattr(self, nome)
            if not math.isfinite(valor) or valor < 0:
                raise ValueError(f"{nome} deve ser finito e não negativo, recebido {valor}")
        if not math.isfinite(self.temperature) or self.temperature <= 0:
            raise ValueError(f"Temperatura deve ser positiva, recebido {self.temperature}")


class ClassifierHead(nn.Module):
    """Perceptron de 2 camadas θ: D -> |T^p| logits"""

    def __init__(self, dim: int, n_pais: int, largura: int = 64):
        super().__init__()
        if n_pais < 1:
            raise ValueError("Classificador precisa de ao menos uma categoria pai")
        self.n_pais = n_pais
        self.camadas = nn.Sequential(nn.Linear(dim, largura), nn.GELU(), nn.Linear(largura, n_pais))

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.camadas(h)


# ====================== FEATURE CONJUNTA ======================

def _como_tensor(x: Union[torch.Tensor, np.ndarray, Embedding], referencia: torch.Tensor) -> torch.Tensor:
    if isinstance(x, Embedding):
        x = x.vec
    return torch.as_tensor(np.array(x) if isinstance(x, np.ndarray) else x,
                           dtype=referencia.dtype)


def joint_feature(views: Union[ViewFeatureSet, torch.Tensor],
                  text: Union[Embedding, torch.Tensor]) -> JointFeature:
    """
    Pesos w = Softmax(⟨view_v / ||view_v||, text⟩) e h^J = Σ_v w_v · view_v.

    As linhas são normalizadas só para o escore; a combinação usa as
    linhas fundidas originais.
    """
    linhas = views.features if isinstance(views, ViewFeatureSet) else views
    texto = _como_tensor(text, linhas)
    if linhas.dim() != 2 or texto.dim() != 1 or linhas.shape[1] != texto.shape[0]:
        raise ValueError(f"Dimensões incompatíveis: vistas {tuple(linhas.shape)}, "
                         f"texto {tuple(texto.shape)}")
    escores = F.normalize(linhas, dim=-1) @ texto
    pesos = torch.softmax(escores, dim=0)
    vec = (pesos.unsqueeze(1) * linhas).sum(dim=0)
    return JointFeature(vec=vec, weights=pesos)


def joint_feature_lote(views: torch.Tensor, text: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Versão em lote: views [B, V, D], text [B, D] -> (h^J [B, D], pesos [B, V])"""
    if views.dim() != 3 or text.dim() != 2 or views.shape[0] != text.shape[0] \
            or views.shape[2] != text.shape[1]:
        raise ValueError(f"Dimensões incompatíveis: vistas {tuple(views.shape)}, "
                         f"texto {tuple(text.shape)}")
    escores = torch.einsum("bvd,bd->bv", F.normalize(views, dim=-1), text)
    pesos = torch.softmax(escores, dim=1)
    return torch.einsum("bv,bvd->bd", pesos, views), pesos


# ====================== PERDAS ======================

def contrastive_loss(A: torch.Tensor, B: torch.Tensor, temperature: float) -> torch.Tensor:
    """
    InfoNCE simétrica: média das entropias cruzadas A->B e B->A sobre a
    matriz de similaridades cosseno / τ; positivos nos índices casados.
    """
    if A.shape != B.shape or A.dim() != 2:
        raise ValueError(f"Lotes com formas diferentes: {tuple(A.shape)} vs {tuple(B.shape)}")
    if A.shape[0] < 2:
        raise ValueError("Perda contrastiva exige N >= 2 (sem negativos)")
    if temperature <= 0:
        raise ValueError("Temperatura deve ser positiva")
    logits = F.normalize(A, dim=-1) @ F.normalize(B, dim=-1).T / temperature
    alvos = torch.arange(A.shape[0], device=A.device)
    return (F.cross_entropy(logits, alvos) + F.cross_entropy(logits.T, alvos)) / 2


def parent_classification_loss(head: ClassifierHead, h_C: torch.Tensor,
                               parent_codes: torch.Tensor) -> torch.Tensor:
    """Entropia cruzada média da categoria pai sob Softmax(θ(h_C))"""
    codigos = torch.as_tensor(parent_codes, dtype=torch.long)
    if torch.any(codigos < 0) or torch.any(codigos >= head.n_pais):
        raise ValueError(f"Código de categoria pai fora de [0, {head.n_pais})")
    return F.cross_entropy(head(h_C), codigos)


@dataclass(eq=False)
class LoteAlinhamento:
    """Features de um lote prontas para o objetivo"""
    h_C: torch.Tensor  # [B, D] nuvens
    vistas: torch.Tensor  # [B, V, D] features fundidas
    h_T: torch.Tensor  # [B, D] texto da subcategoria (congelado)
    codigos_pai: torch.Tensor  # [B]


def total_loss(lote: LoteAlinhamento, head: ClassifierHead, lw: LossWeights,
               modo: str = "jma") -> Tuple[torch.Tensor, Dict[str, float]]:
    """
    Objetivo total com decomposição por termo.

    modo 'jma':          λ1·L(C, J) + λ2·L(C, T) + λ3·L(T, J) + λcls·L_cls
    modo 'independente': λ1·L(C, média das vistas) + λ2·L(C, T) + λcls·L_cls
    """
    if modo not in MODOS_ALINHAMENTO:
        raise ValueError(f"Modo de alinhamento inválido: {modo!r}")
    h_T = lote.h_T.detach()
    tau = lw.temperature
    zero = lote.h_C.new_zeros(())
    if modo == "jma":
        h_J, _ = joint_feature_lote(lote.vistas, h_T)
        l_cj = contrastive_loss(lote.h_C, h_J, tau)
        l_tj = contrastive_loss(h_T, h_J, tau)
    else:
        l_cj = contrastive_loss(lote.h_C, lote.vistas.mean(dim=1), tau)
        l_tj = zero
    l_ct = contrastive_loss(lote.h_C, h_T, tau)
    l_cls = parent_classification_loss(head, lote.h_C, lote.codigos_pai)
    total = lw.lambda1 * l_cj + lw.lambda2 * l_ct + lw.lambda3 * l_tj + lw.lambda_cls * l_cls
    decomposicao = {
        "contraste_nuvem_juncao": float(l_cj.detach()),
        "contraste_nuvem_texto": float(l_ct.detach()),
        "contraste_texto_juncao": float(l_tj.detach()),
        "classificacao_pai": float(l_cls.detach()),
        "total": float(total.detach()),
    }
    return total, decomposicao


# ====================== MODELO E LOTES ======================

class ModeloJM3D(nn.Module):
    """Parâmetros treináveis: codificador de pontos, tabelas ε + LayerNorm e cabeça θ"""

    def __init__(self, dim: int, n_pais: int, max_depth: float,
                 largura_ponto: Tuple[int, int] = (64, 128), largura_cabeca: int = 128,
                 ativacao: str = "gelu", usar_embeddings: bool = True):
        super().__init__()
        self.dim = dim
        self.codificador_pontos = PointEncoder(dim, largura_ponto, largura_cabeca, ativacao)
        self.vistas = EmbeddingsVista(dim, max_depth, usar_embeddings)
        self.classificador = ClassifierHead(dim, n_pais)

    def forward(self, lote: "LoteTriplas") -> LoteAlinhamento:
        h_C = self.codificador_pontos(lote.pontos)
        fundidas = self.vistas(lote.vistas_brutas, lote.indices_angulo, lote.faixas_profundidade)
        return LoteAlinhamento(h_C=h_C, vistas=fundidas, h_T=lote.texto_sub,
                               codigos_pai=lote.codigos_pai)


@dataclass(eq=False)
class LoteTriplas:
    """Tensores de um lote de triplas (entradas do modelo)"""
    ids: List[str]
    pontos: torch.Tensor  # [B, N, 3]
    vistas_brutas: torch.Tensor  # [B, V, D] saída do codificador de imagem congelado
    indices_angulo: torch.Tensor  # [B, V]
    faixas_profundidade: torch.Tensor  # [B, V]
    texto_sub: torch.Tensor  # [B, D]
    codigos_pai: torch.Tensor  # [B]

    def __len__(self) -> int:
        return len(self.ids)

    def to(self, dtype: torch.dtype) -> "LoteTriplas":
        return LoteTriplas(self.ids, self.pontos.to(dtype), self.vistas_brutas.to(dtype),
                           self.indices_angulo, self.faixas_profundidade,
                           self.texto_sub.to(dtype), self.codigos_pai)


def texto_da_subcategoria(sub: str) -> str:
    return Configuracao.TEMPLATE_PROMPT.replace(Configuracao.MARCADOR_CLASSE, sub)


def preparar_lote(triplas: Sequence[TripletSample], tree: CategoryTree,
                  enc_imagem: FrozenEncoderHandle, enc_texto: FrozenEncoderHandle,
                  max_depth: float, cache: Optional[MutableMapping[Tuple[str, int], np.ndarray]] = None,
                  dtype: torch.dtype = Configuracao.DTYPE_TREINO) -> LoteTriplas:
    """
    Codifica vistas e textos com os codificadores congelados e empilha o lote.

    Todas as triplas devem ter o mesmo número de pontos e de vistas.
    """
    if not triplas:
        raise ValueError("Lote vazio")
    cache = {} if cache is None else cache
    n_pontos = {t.cloud.n_points for t in triplas}
    n_vistas = {len(t.views) for t in triplas}
    if len(n_pontos) > 1 or len(n_vistas) > 1:
        raise ValueError("Triplas de um lote devem ter o mesmo N_c e o mesmo v")
    brutas, angulos, profundidades, textos = [], [], [], []
    for t in triplas:
        linhas = []
        for vista in t.views:
            chave = (vista.source_id, vista.angle_index)
            if chave not in cache:
                cache[chave] = encode_image(vista, enc_imagem).vec
            linhas.append(cache[chave])
        brutas.append(np.stack(linhas))
        angulos.append(t.angle_indices)
        profundidades.append(depth_bucket([v.mean_depth for v in t.views], max_depth))
        chave_texto = ("<texto>", t.sub)
        if chave_texto not in cache:
            cache[chave_texto] = encode_text(texto_da_subcategoria(t.sub), enc_texto).vec
        textos.append(cache[chave_texto])
    return LoteTriplas(
        ids=[t.cloud.id for t in triplas],
        pontos=torch.as_tensor(np.stack([t.cloud.points for t in triplas]), dtype=dtype),
        vistas_brutas=torch.as_tensor(np.stack(brutas), dtype=dtype),
        indices_angulo=torch.as_tensor(np.array(angulos), dtype=torch.long),
        faixas_profundidade=torch.as_tensor(np.stack(profundidades), dtype=torch.long),
        texto_sub=torch.as_tensor(np.stack(textos), dtype=dtype),
        codigos_pai=torch.as_tensor([tree.parent_code[t.parent] for t in triplas], dtype=torch.long),
    )


# ====================== ESTADO E PASSO DE TREINO ======================

@dataclass(frozen=True)
class ConfigOtimizador:
    """AdamW com cosseno até zero em total_passos"""
    lr: float = 1e-3
    weight_decay: float = 1e-2
    total_passos: int = 1
    betas: Tuple[float, float] = (0.9, 0.999)
    agenda: str = "cosine"

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr e weight_decay devem ser não negativos")
        if self.agenda not in ("cosine", "constant"):
            raise ValueError(f"Agenda de lr desconhecida: {self.agenda!r}")
        if self.total_passos < 1:
            raise ValueError("total_passos deve ser >= 1")


class EstadoTreino:
    """Módulos treináveis, AdamW, agenda cosseno, contador de passos e gerador de embaralhamento"""

    def __init__(self, modelo: ModeloJM3D, config: ConfigOtimizador, seed: int = 0):
        self.modelo = modelo
        self.config = config
        self.otimizador = torch.optim.AdamW(modelo.parameters(), lr=config.lr, betas=config.betas,
                                            weight_decay=config.weight_decay)
        if config.agenda == "cosine":
            self.agendador = torch.optim.lr_scheduler.CosineAnnealingLR(
                self.otimizador, T_max=config.total_passos, eta_min=0.0)
        else:
            self.agendador = torch.optim.lr_scheduler.ConstantLR(
                self.otimizador, factor=1.0, total_iters=0)
        self.passo = 0
        self.gerador = torch.Generator().manual_seed(seed)

    @property
    def lr_atual(self) -> float:
        return float(self.otimizador.param_groups[0]["lr"])

    def ordem_embaralhada(self, n: int) -> List[int]:
        return torch.randperm(n, generator=self.gerador).tolist()

    # ---- serialização para checkpoints JMCK ----

    def tensores(self) -> Dict[str, torch.Tensor]:
        saida = {f"param/{nome}": p.detach() for nome, p in self.modelo.named_parameters()}
        nomes = dict(zip(map(id, self.modelo.parameters()),
                         (n for n, _ in self.modelo.named_parameters())))
        for p, estado in self.otimizador.state.items():
            for chave in ("exp_avg", "exp_avg_sq"):
                if chave in estado:
                    saida[f"adamw/{chave}/{nomes[id(p)]}"] = estado[chave]
        return saida

    def metadados(self) -> Dict[str, object]:
        passos_adam = {}
        nomes = dict(zip(map(id, self.modelo.parameters()),
                         (n for n, _ in self.modelo.named_parameters())))
        for p, estado in self.otimizador.state.items():
            if "step" in estado:
                passos_adam[nomes[id(p)]] = int(float(estado["step"]))
        return {
            "passo": self.passo,
            "passos_adamw": passos_adam,
            "param_groups": [{k: (list(v) if isinstance(v, tuple) else v)
                              for k, v in g.items() if k != "params"}
                             for g in self.otimizador.param_groups],
            "agendador": self.agendador.state_dict(),
            "rng_embaralhamento": self.gerador.get_state().tolist(),
            "rng_torch": torch.get_rng_state().tolist(),
        }

    def carregar(self, tensores: Mapping[str, torch.Tensor], metadados: Mapping[str, object]) -> None:
        """Restaura parâmetros, momentos do AdamW, agenda e estados de RNG"""
        parametros = dict(self.modelo.named_parameters())
        faltando = [n for n in parametros if f"param/{n}" not in tensores]
        if faltando:
            raise ValueError(f"Checkpoint sem parâmetros: {faltando}")
        with torch.no_grad():
            for nome, p in parametros.items():
                origem = tensores[f"param/{nome}"]
                if tuple(origem.shape) != tuple(p.shape):
                    raise ValueError(f"Forma de {nome!r} difere: {tuple(origem.shape)} vs {tuple(p.shape)}")
                p.copy_(origem.to(p.dtype))
        estado_otim = {}
        passos_adam = dict(metadados.get("passos_adamw", {}))
        for i, (nome, p) in enumerate(parametros.items()):
            if nome in passos_adam:
                estado_otim[i] = {
                    "step": torch.tensor(float(passos_adam[nome])),
                    "exp_avg": tensores[f"adamw/exp_avg/{nome}"].to(p.dtype).clone(),
                    "exp_avg_sq": tensores[f"adamw/exp_avg_sq/{nome}"].to(p.dtype).clone(),
                }
        grupos = []
        for g_atual, g_salvo in zip(self.otimizador.state_dict()["param_groups"],
                                    metadados["param_groups"]):
            grupo = dict(g_salvo)
            grupo["betas"] = tuple(grupo["betas"])
            grupo["params"] = g_atual["params"]
            grupos.append(grupo)
        self.otimizador.load_state_dict({"state": estado_otim, "param_groups": grupos})
        self.agendador.load_state_dict(dict(metadados["agendador"]))
        self.passo = int(metadados["passo"])
        self.gerador.set_state(torch.tensor(metadados["rng_embaralhamento"], dtype=torch.uint8))
        torch.set_rng_state(torch.tensor(metadados["rng_torch"], dtype=torch.uint8))


def state_checksum(modelo: nn.Module) -> str:
    """SHA-256 dos bytes de todos os parâmetros (comparação bit a bit)"""
    h = hashlib.sha256()
    for nome, p in sorted(modelo.named_parameters()):
        h.update(nome.encode("utf-8"))
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def train_step(estado: EstadoTreino, lote: LoteTriplas, lw: LossWeights,
               modo: str = "jma") -> Dict[str, float]:
    """
    Um passo AdamW (decaimento desacoplado) com taxa em agenda cosseno.

    Returns:
        Decomposição da perda do lote mais 'lr' e 'passo'

    Raises:
        PerdaNaoFinitaError: se a perda total não for finita (nenhum parâmetro é alterado)
    """
    estado.modelo.train()
    saida = estado.modelo(lote)
    total, decomposicao = total_loss(saida, estado.modelo.classificador, lw, modo)
    if not torch.isfinite(total):
        raise PerdaNaoFinitaError(f"Perda não finita no passo {estado.passo}: {decomposicao}")
    lr = estado.lr_atual
    estado.otimizador.zero_grad(set_to_none=True)
    total.backward()
    estado.otimizador.step()
    estado.agendador.step()
    estado.passo += 1
    decomposicao.update({"lr": lr, "passo": estado.passo})
    Logger.debug(f"passo {estado.passo}: total={decomposicao['total']:.6f} lr={lr:.3e}")
    return decomposicao


@torch.no_grad()
def embeddings_nuvens(modelo: ModeloJM3D, pontos: Sequence[np.ndarray]) -> np.ndarray:
    """h_C normalizado de cada nuvem, em float64 [N, D]"""
    modelo.eval()
    dtype = next(modelo.parameters()).dtype
    saidas = [modelo.codificador_pontos(torch.as_tensor(np.asarray(p), dtype=dtype)).double()
              for p in pontos]
    if not saidas:
        return np.zeros((0, modelo.dim))
    return F.normalize(torch.stack(saidas), dim=-1).numpy()

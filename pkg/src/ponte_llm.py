"""
PONTE COM MODELO DE LINGUAGEM
Conversas de instrução, projeção de tokens de pontos, injeção no
placeholder <point>, perda supervisionada mascarada e decodificação gulosa
sobre um modelo de linguagem causal pequeno e congelado
Versão 1.0
"""
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from src.alinhamento_jma import PerdaNaoFinitaError, state_checksum
from src.codificadores import PointEncoder, tensor_da_nuvem
from src.models import PointCloud
from src.settings import Configuracao, Logger, barra_progresso_ativa

IGNORAR = -100


# ====================== VOCABULÁRIO ======================

class Vocabulario:
    """Tokenizador por palavras (f_t) e vocabulário bijetivo token <-> id (f_v)"""

    ESPECIAIS = (Configuracao.TOKEN_PAD, Configuracao.TOKEN_DESCONHECIDO, Configuracao.TOKEN_PONTO,
                 Configuracao.TOKEN_FIM, Configuracao.TOKEN_USUARIO, Configuracao.TOKEN_ASSISTENTE,
                 Configuracao.TOKEN_QUEBRA)

    def __init__(self, tokens: Iterable[str]):
        lista = list(self.ESPECIAIS) + [t for t in tokens if t not in self.ESPECIAIS]
        if len(set(lista)) != len(lista):
            raise ValueError("Vocabulário com tokens repetidos")
        self.tokens: Tuple[str, ...] = tuple(lista)
        self._ids: Dict[str, int] = {t: i for i, t in enumerate(self.tokens)}

    @staticmethod
    def tokenizar(texto: str) -> List[str]:
        return re.sub(r"([.,!?;])", r" \1 ", texto).split()

    @classmethod
    def construir(cls, textos: Iterable[str]) -> "Vocabulario":
        vistos = set()
        for texto in textos:
            vistos.update(cls.tokenizar(texto))
        return cls(sorted(vistos - set(cls.ESPECIAIS)))

    def __len__(self) -> int:
        return len(self.tokens)

    def id_de(self, token: str) -> int:
        return self._ids.get(token, self._ids[Configuracao.TOKEN_DESCONHECIDO])

    def token_de(self, indice: int) -> str:
        return self.tokens[indice]

    def codificar(self, texto: str) -> List[int]:
        return [self.id_de(t) for t in self.tokenizar(texto)]

    def decodificar(self, ids: Iterable[int]) -> str:
        return re.sub(r" ([.,!?;])", r"\1", " ".join(self.tokens[i] for i in ids))

    def normalizar(self, texto: str) -> str:
        """Forma canônica do texto após ida e volta pelo vocabulário"""
        return self.decodificar(self.codificar(texto))

    @property
    def id_ponto(self) -> int:
        return self._ids[Configuracao.TOKEN_PONTO]

    @property
    def id_fim(self) -> int:
        return self._ids[Configuracao.TOKEN_FIM]

    @property
    def id_pad(self) -> int:
        return self._ids[Configuracao.TOKEN_PAD]

    def to_list(self) -> List[str]:
        return list(self.tokens[len(self.ESPECIAIS):])


# ====================== CONVERSAS ======================

@dataclass(frozen=True)
class ConversationRecord:
    """Amostra de ajuste por instrução com um único placeholder <point>"""
    id: str
    instruction: str
    caption: str
    layout: str
    token_ids: Tuple[int, ...]
    loss_mask: Tuple[bool, ...]
    point_token_id: int

    def __post_init__(self):
        if self.layout not in Configuracao.LAYOUTS_CONVERSA:
            raise ValueError(f"Layout inválido: {self.layout!r}")
        if len(self.token_ids) != len(self.loss_mask):
            raise ValueError("Máscara e sequência com comprimentos diferentes")
        n_ponto = self.token_ids.count(self.point_token_id)
        if n_ponto != 1:
            raise ValueError(f"Conversa {self.id!r} deve ter exatamente um placeholder, tem {n_ponto}")
        if not any(self.loss_mask):
            raise ValueError(f"Conversa {self.id!r} sem posições supervisionadas")

    @property
    def posicao_ponto(self) -> int:
        return self.token_ids.index(self.point_token_id)

    @property
    def inicio_resposta(self) -> int:
        """Primeira posição supervisionada (início da legenda)"""
        return self.loss_mask.index(True)

    def to_dict(self) -> Dict[str, str]:
        return {"id": self.id, "layout": self.layout, "instruction": self.instruction,
                "caption": self.caption}


def renderizar_conversa(id_: str, instruction: str, caption: str, layout: str,
                        vocab: Vocabulario) -> ConversationRecord:
    """
    point-first: USER: <point> \\n {instrução} ASSISTANT: {legenda} </s>
    point-last:  USER: {instrução} <point> \\n ASSISTANT: {legenda} </s>
    """
    if Configuracao.TOKEN_PONTO in caption:
        raise ValueError(f"Legenda de {id_!r} contém o placeholder {Configuracao.TOKEN_PONTO}")
    if Configuracao.TOKEN_PONTO in instruction:
        raise ValueError(f"Instrução contém o placeholder {Configuracao.TOKEN_PONTO}")
    c = Configuracao
    if layout == "point-first":
        prefixo = [c.TOKEN_USUARIO, c.TOKEN_PONTO, c.TOKEN_QUEBRA] + vocab.tokenizar(instruction) \
            + [c.TOKEN_ASSISTENTE]
    elif layout == "point-last":
        prefixo = [c.TOKEN_USUARIO] + vocab.tokenizar(instruction) \
            + [c.TOKEN_PONTO, c.TOKEN_QUEBRA, c.TOKEN_ASSISTENTE]
    else:
        raise ValueError(f"Layout inválido: {layout!r}")
    resposta = vocab.tokenizar(caption) + [c.TOKEN_FIM]
    ids = [vocab.id_de(t) for t in prefixo + resposta]
    mascara = [False] * len(prefixo) + [True] * len(resposta)
    return ConversationRecord(id=id_, instruction=instruction, caption=caption, layout=layout,
                              token_ids=tuple(ids), loss_mask=tuple(mascara),
                              point_token_id=vocab.id_ponto)


def build_conversations(captions: Sequence[Tuple[str, str]], templates: Sequence[str],
                        vocab: Vocabulario, seed: int) -> List[ConversationRecord]:
    """Template e layout sorteados uniformemente por registro (determinístico por semente)"""
    if not templates:
        raise ValueError("É necessário ao menos um template de instrução")
    if not captions:
        raise ValueError("Lista de legendas vazia")
    rng = np.random.default_rng(seed)
    registros = []
    for id_, caption in captions:
        template = templates[int(rng.integers(len(templates)))]
        layout = Configuracao.LAYOUTS_CONVERSA[int(rng.integers(len(Configuracao.LAYOUTS_CONVERSA)))]
        registros.append(renderizar_conversa(id_, template, caption, layout, vocab))
    return registros


def importar_legendas(caminho: Union[str, Path]) -> List[Tuple[str, str]]:
    """Lê legendas {id, caption} de um arquivo JSON por linha"""
    df = pd.read_json(caminho, orient="records", lines=True, dtype={"id": str, "caption": str})
    if not {"id", "caption"} <= set(df.columns):
        raise ValueError(f"{Path(caminho).name}: campos 'id' e 'caption' são obrigatórios")
    if df["id"].duplicated().any():
        raise ValueError(f"{Path(caminho).name}: ids de legenda duplicados")
    return list(zip(df["id"], df["caption"]))


def carregar_conversas(registros: Iterable[Dict[str, str]], vocab: Vocabulario) -> List[ConversationRecord]:
    """Reconstrói conversas a partir de registros {id, layout, instruction, caption}"""
    return [renderizar_conversa(r["id"], r["instruction"], r["caption"], r["layout"], vocab)
            for r in registros]


# ====================== TOKENS DE PONTOS ======================

@dataclass(frozen=True, eq=False)
class PointTokenBlock:
    """T_c (n x d1) antes e T'_c (n x d) depois da projeção"""
    T_c: torch.Tensor
    T_projetado: torch.Tensor

    def __post_init__(self):
        if self.T_c.shape[0] != self.T_projetado.shape[0]:
            raise ValueError("T_c e T'_c devem ter o mesmo número de tokens")

    @property
    def n(self) -> int:
        return int(self.T_c.shape[0])


class Projetor(nn.Module):
    """Mapa por linha d1 -> d: camada linear (padrão) ou perceptron de 2 camadas"""

    def __init__(self, d1: int, d: int, camadas: int = 1, largura: int = 128):
        super().__init__()
        if camadas not in (1, 2):
            raise ValueError("Projetor aceita 1 ou 2 camadas")
        self.d1, self.d = d1, d
        if camadas == 1:
            self.rede = nn.Linear(d1, d)
        else:
            self.rede = nn.Sequential(nn.Linear(d1, largura), nn.GELU(), nn.Linear(largura, d))

    def forward(self, T_c: torch.Tensor) -> torch.Tensor:
        return self.rede(T_c)


def project_point_tokens(T_c: torch.Tensor, projetor: Projetor) -> torch.Tensor:
    if T_c.dim() != 2 or T_c.shape[1] != projetor.d1:
        raise ValueError(f"T_c deve ser [n, {projetor.d1}], recebido {tuple(T_c.shape)}")
    return projetor(T_c)


def _selecao_em_cascata(feats: torch.Tensor, n: int) -> List[torch.Tensor]:
    """
    Máscaras de pontos restantes para cada token. O token r é o max-pool
    após remover os r-1 pontos de maior contribuição, um por rodada.
    """
    with torch.no_grad():
        feats = feats.detach()
        restantes = torch.ones(feats.shape[0], dtype=torch.bool)
        soma = feats.sum(dim=1)
        mascaras = []
        for _ in range(n):
            mascaras.append(restantes.clone())
            indices = torch.nonzero(restantes).squeeze(1)
            locais = feats[indices]
            contribuicao = torch.bincount(locais.argmax(dim=0), minlength=indices.shape[0])
            candidatos = contribuicao == contribuicao.max()
            # desempate: soma das features, depois as próprias features em ordem lexicográfica
            if int(candidatos.sum()) > 1:
                somas = torch.where(candidatos, soma[indices], torch.full_like(soma[indices], -math.inf))
                candidatos &= somas == somas.max()
            posicoes = torch.nonzero(candidatos).squeeze(1)
            if posicoes.shape[0] > 1:
                chaves = np.lexsort(locais[posicoes].double().numpy().T[::-1])
                escolhido = posicoes[int(chaves[-1])]
            else:
                escolhido = posicoes[0]
            restantes[indices[escolhido]] = False
        return mascaras


def extract_point_tokens(cloud: PointCloud, encoder: nn.Module, n: int) -> torch.Tensor:
    """
    n tokens d1 do estágio anterior à cabeça do codificador de pontos.

    O primeiro token é o max-pool global; cada token seguinte repete o
    max-pool sem o ponto de maior contribuição ao pool anterior (número de
    canais em que ele é o máximo). A seleção é invariante a permutações.

    Raises:
        TypeError: codificador sem estágio intermediário por ponto
        ValueError: n maior que o número de pontos
    """
    if not hasattr(encoder, "caracteristicas_por_ponto"):
        raise TypeError(f"{type(encoder).__name__} não expõe features intermediárias por ponto")
    if not (0 <= n <= cloud.n_points):
        raise ValueError(f"n deve estar em [0, {cloud.n_points}], recebido {n}")
    dtype = next(encoder.parameters()).dtype
    feats = encoder.caracteristicas_por_ponto(tensor_da_nuvem(cloud, dtype))
    if n == 0:
        return feats.new_zeros((0, feats.shape[1]))
    mascaras = _selecao_em_cascata(feats, n)
    return torch.stack([feats[m].max(dim=0).values for m in mascaras])


# ====================== MODELO DE LINGUAGEM ======================

class BlocoCausal(nn.Module):
    """Bloco pre-norm: atenção causal multi-cabeça + MLP"""

    def __init__(self, largura: int, n_cabecas: int):
        super().__init__()
        if largura % n_cabecas:
            raise ValueError("largura deve ser múltipla de n_cabecas")
        self.n_cabecas = n_cabecas
        self.norma1 = nn.LayerNorm(largura)
        self.qkv = nn.Linear(largura, 3 * largura)
        self.saida = nn.Linear(largura, largura)
        self.norma2 = nn.LayerNorm(largura)
        self.mlp = nn.Sequential(nn.Linear(largura, 4 * largura), nn.GELU(),
                                 nn.Linear(4 * largura, largura))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, L, C = x.shape
        q, k, v = self.qkv(self.norma1(x)).split(C, dim=2)
        q, k, v = (t.view(B, L, self.n_cabecas, C // self.n_cabecas).transpose(1, 2) for t in (q, k, v))
        atencao = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        x = x + self.saida(atencao.transpose(1, 2).reshape(B, L, C))
        return x + self.mlp(self.norma2(x))


class TinyCausalLM(nn.Module):
    """
    Modelo de linguagem causal mínimo que consome embeddings.

    Shapes:
        forward: [B, L, d] (ou [L, d]) -> logits [B, L, |V|] (ou [L, |V|])
    """

    def __init__(self, vocab: Vocabulario, largura: int = 64, n_blocos: int = 2,
                 n_cabecas: int = 4, max_posicoes: int = 256):
        super().__init__()
        self.vocab = vocab
        self.largura = largura
        self.max_posicoes = max_posicoes
        self.embedding = nn.Embedding(len(vocab), largura)
        self.posicoes = nn.Embedding(max_posicoes, largura)
        self.blocos = nn.ModuleList(BlocoCausal(largura, n_cabecas) for _ in range(n_blocos))
        self.norma_final = nn.LayerNorm(largura)
        self.cabeca = nn.Linear(largura, len(vocab))

    def embed(self, ids: Union[Sequence[int], torch.Tensor]) -> torch.Tensor:
        return self.embedding(torch.as_tensor(ids, dtype=torch.long))

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        sem_lote = embeddings.dim() == 2
        x = embeddings.unsqueeze(0) if sem_lote else embeddings
        L = x.shape[1]
        if L > self.max_posicoes:
            raise ValueError(f"Sequência de {L} posições excede o máximo {self.max_posicoes}")
        x = x + self.posicoes(torch.arange(L))
        for bloco in self.blocos:
            x = bloco(x)
        logits = self.cabeca(self.norma_final(x))
        return logits.squeeze(0) if sem_lote else logits


def congelar(modulo: nn.Module) -> nn.Module:
    for p in modulo.parameters():
        p.requires_grad_(False)
    return modulo.eval()


def lm_checksum(lm: TinyCausalLM) -> str:
    return state_checksum(lm)


# ====================== MONTAGEM E PERDA ======================

@dataclass(eq=False)
class SequenciaMontada:
    """Sequência embutida [T'_c intercalado com a linguagem] e alvos alinhados"""
    embeddings: torch.Tensor  # [n + m, d]
    alvos: torch.Tensor  # [n + m], IGNORAR nos tokens de pontos
    mascara: torch.Tensor  # [n + m] bool
    inicio_pontos: int
    n_pontos: int


def _montar(ids: Sequence[int], mascara: Sequence[bool], point_id: int,
            T_projetado: torch.Tensor, lm: TinyCausalLM) -> SequenciaMontada:
    posicoes = [i for i, t in enumerate(ids) if t == point_id]
    if len(posicoes) != 1:
        raise ValueError(f"Sequência deve ter exatamente um placeholder, tem {len(posicoes)}")
    if T_projetado.dim() != 2 or T_projetado.shape[1] != lm.largura:
        raise ValueError(f"T'_c deve ser [n, {lm.largura}], recebido {tuple(T_projetado.shape)}")
    p = posicoes[0]
    antes, depois = list(ids[:p]), list(ids[p + 1:])
    n = T_projetado.shape[0]
    partes = [lm.embed(antes), T_projetado.to(lm.embedding.weight.dtype), lm.embed(depois)]
    alvos = antes + [IGNORAR] * n + depois
    mascara_final = list(mascara[:p]) + [False] * n + list(mascara[p + 1:])
    return SequenciaMontada(embeddings=torch.cat(partes, dim=0),
                            alvos=torch.as_tensor(alvos, dtype=torch.long),
                            mascara=torch.as_tensor(mascara_final, dtype=torch.bool),
                            inicio_pontos=p, n_pontos=n)


def assemble_input(record: ConversationRecord, T_projetado: torch.Tensor,
                   lm: TinyCausalLM) -> SequenciaMontada:
    """Substitui o placeholder pelas n linhas projetadas; comprimento total n + m"""
    return _montar(record.token_ids, record.loss_mask, record.point_token_id, T_projetado, lm)


def montar_prefixo(record: ConversationRecord, T_projetado: torch.Tensor,
                   lm: TinyCausalLM) -> SequenciaMontada:
    """Entrada de decodificação: tudo até 'ASSISTANT:' inclusive"""
    corte = record.inicio_resposta
    return _montar(record.token_ids[:corte], record.loss_mask[:corte],
                   record.point_token_id, T_projetado, lm)


def sft_loss(lm: nn.Module, embeddings: torch.Tensor, alvos: torch.Tensor,
             mascara: torch.Tensor) -> torch.Tensor:
    """
    Entropia cruzada do próximo token, média sobre posições supervisionadas.

    Aceita [L, d] ou lote [B, L, d]; o logit na posição t prevê o alvo t + 1.
    """
    if mascara.shape != alvos.shape or embeddings.shape[:-1] != mascara.shape:
        raise ValueError("Máscara, alvos e sequência com comprimentos diferentes")
    if not bool(mascara[..., 1:].any()):
        raise ValueError("Máscara sem nenhuma posição supervisionada")
    logits = lm(embeddings)
    previstos = logits[..., :-1, :]
    alvos_seguintes = alvos[..., 1:]
    selecao = mascara[..., 1:]
    return F.cross_entropy(previstos[selecao], alvos_seguintes[selecao])


def empilhar(sequencias: Sequence[SequenciaMontada], pad_id: int) -> Tuple[torch.Tensor, ...]:
    """Preenche à direita até o maior comprimento (causal: o preenchimento não afeta posições anteriores)"""
    L = max(s.embeddings.shape[0] for s in sequencias)
    d = sequencias[0].embeddings.shape[1]
    embs, alvos, mascaras = [], [], []
    for s in sequencias:
        falta = L - s.embeddings.shape[0]
        embs.append(torch.cat([s.embeddings, s.embeddings.new_zeros((falta, d))]))
        alvos.append(torch.cat([s.alvos, torch.full((falta,), pad_id, dtype=torch.long)]))
        mascaras.append(torch.cat([s.mascara, torch.zeros(falta, dtype=torch.bool)]))
    return torch.stack(embs), torch.stack(alvos), torch.stack(mascaras)


@torch.no_grad()
def decode_greedy(lm: TinyCausalLM, prefixo: torch.Tensor, max_len: int) -> str:
    """Decodificação por argmax até </s> ou max_len tokens"""
    if max_len < 1:
        raise ValueError("max_len deve ser >= 1")
    lm.eval()
    sequencia = prefixo
    gerados: List[int] = []
    for _ in range(max_len):
        if sequencia.shape[0] >= lm.max_posicoes:
            break
        proximo = int(lm(sequencia)[-1].argmax())
        if proximo == lm.vocab.id_fim:
            break
        gerados.append(proximo)
        sequencia = torch.cat([sequencia, lm.embed([proximo]).to(sequencia.dtype)])
    return lm.vocab.decodificar(gerados)


# ====================== PRÉ-TREINO DO MODELO DE LINGUAGEM ======================

def _bloco_eco(record: ConversationRecord, lm: TinyCausalLM, n: int) -> torch.Tensor:
    """Embeddings da própria legenda repetidos até n linhas"""
    ids = [t for t, m in zip(record.token_ids, record.loss_mask) if m]
    repetidos = [ids[i % len(ids)] for i in range(n)]
    return lm.embed(repetidos)


def pretrain_language_model(lm: TinyCausalLM, registros: Sequence[ConversationRecord],
                            n_tokens: int, passos: int, lr: float = 3e-3,
                            seed: int = 0) -> List[float]:
    """
    Aquecimento do modelo de linguagem antes de congelá-lo.

    O placeholder recebe as embeddings da própria legenda (n linhas), de
    modo que o modelo aprende a ler conteúdo injetado nessa posição.

    Returns:
        Perda por passo
    """
    if not registros:
        raise ValueError("Nenhuma conversa para o pré-treino")
    torch.manual_seed(seed)
    lm.train()
    otimizador = torch.optim.AdamW(lm.parameters(), lr=lr, weight_decay=0.0)
    historico = []
    for passo in tqdm(range(passos), desc="Pré-treino do LM", disable=not barra_progresso_ativa()):
        sequencias = [assemble_input(r, _bloco_eco(r, lm, n_tokens), lm) for r in registros]
        embs, alvos, mascaras = empilhar(sequencias, lm.vocab.id_pad)
        perda = sft_loss(lm, embs, alvos, mascaras)
        if not torch.isfinite(perda):
            raise PerdaNaoFinitaError(f"Perda não finita no pré-treino do LM (passo {passo})")
        otimizador.zero_grad(set_to_none=True)
        perda.backward()
        otimizador.step()
        historico.append(float(perda.detach()))
    Logger.info(f"Pré-treino do LM: perda {historico[0] if historico else float('nan'):.4f} -> "
                f"{historico[-1] if historico else float('nan'):.4f}")
    return historico


# ====================== TREINO DA PONTE ======================

@dataclass(frozen=True)
class ConfigPonte:
    """Taxas de aprendizado em dois níveis e número de tokens de pontos"""
    lr_principal: float = 2e-3
    lr_baixo: float = 2e-5
    weight_decay: float = 0.0
    n_tokens: int = 64

    def __post_init__(self):
        if self.lr_principal < 0 or self.lr_baixo < 0 or self.weight_decay < 0:
            raise ValueError("Taxas e weight_decay devem ser não negativos")
        if self.n_tokens < 0:
            raise ValueError("n_tokens deve ser >= 0")


class EstadoPonte:
    """Projetor (lr principal), codificador de pontos (lr baixo) e LM congelado"""

    def __init__(self, projetor: Projetor, codificador: PointEncoder, lm: TinyCausalLM,
                 config: ConfigPonte):
        self.projetor = projetor
        self.codificador = codificador
        self.lm = congelar(lm)
        self.config = config
        self.otimizador = torch.optim.AdamW(
            [{"params": list(projetor.parameters()), "lr": config.lr_principal},
             {"params": list(codificador.parameters()), "lr": config.lr_baixo}],
            weight_decay=config.weight_decay)
        self.passo = 0

    def bloco_de_tokens(self, cloud: PointCloud) -> PointTokenBlock:
        T_c = extract_point_tokens(cloud, self.codificador, self.config.n_tokens)
        return PointTokenBlock(T_c=T_c, T_projetado=project_point_tokens(T_c, self.projetor))

    @torch.no_grad()
    def decodificar(self, record: ConversationRecord, cloud: PointCloud, max_len: int = 40) -> str:
        bloco = self.bloco_de_tokens(cloud)
        return decode_greedy(self.lm, montar_prefixo(record, bloco.T_projetado, self.lm).embeddings,
                             max_len)


def llm_train_step(estado: EstadoPonte,
                   lote: Sequence[Tuple[ConversationRecord, PointCloud]]) -> Dict[str, float]:
    """
    Um passo AdamW em dois níveis; o LM permanece intacto bit a bit.

    Raises:
        PerdaNaoFinitaError: perda não finita (nenhum parâmetro alterado)
    """
    if not lote:
        raise ValueError("Lote vazio")
    estado.projetor.train()
    estado.codificador.train()
    sequencias = [assemble_input(r, estado.bloco_de_tokens(c).T_projetado, estado.lm)
                  for r, c in lote]
    embs, alvos, mascaras = empilhar(sequencias, estado.lm.vocab.id_pad)
    perda = sft_loss(estado.lm, embs, alvos, mascaras)
    if not torch.isfinite(perda):
        raise PerdaNaoFinitaError(f"Perda não finita no passo {estado.passo} da ponte")
    estado.otimizador.zero_grad(set_to_none=True)
    perda.backward()
    estado.otimizador.step()
    estado.passo += 1
    return {"perda": float(perda.detach()), "passo": estado.passo}

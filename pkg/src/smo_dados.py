"""
ORGANIZAÇÃO ESTRUTURADA DE DADOS MULTIMODAIS (SMO)
Corpus sintético de formas paramétricas, renderização de vistas,
amostragem contínua de vistas e árvore hierárquica de categorias
Versão 1.0
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation
from tqdm import tqdm

from src.models import CandidateViewSet, CategoryTree, PointCloud, TripletSample, ViewImage
from src.settings import Configuracao, Logger, barra_progresso_ativa, derivar_semente


class AmostragemInviavelError(ValueError):
    """Combinação (v, ω) que não cabe em uma janela angular aberta"""


# ====================== SUPERFÍCIES PARAMÉTRICAS ======================

def _direcoes(rng: np.random.Generator, n: int) -> np.ndarray:
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _superficie_caixa(rng: np.random.Generator, n: int, dims: Sequence[float],
                      centro: Sequence[float] = (0.0, 0.0, 0.0)) -> np.ndarray:
    """Pontos uniformes na superfície de uma caixa de lados dims"""
    a, b, c = dims
    areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    pts = (rng.random((n, 3)) - 0.5) * np.asarray(dims)
    eixo = faces // 2
    sinal = np.where(faces % 2 == 0, 0.5, -0.5)
    pts[np.arange(n), eixo] = sinal * np.asarray(dims)[eixo]
    return pts + np.asarray(centro)


def _superficie_elipsoide(rng: np.random.Generator, n: int, raios: Sequence[float],
                          centro: Sequence[float] = (0.0, 0.0, 0.0)) -> np.ndarray:
    return _direcoes(rng, n) * np.asarray(raios) + np.asarray(centro)


def _disco(rng: np.random.Generator, n: int, raio: float, z: float) -> np.ndarray:
    r = raio * np.sqrt(rng.random(n))
    t = rng.random(n) * 2 * np.pi
    return np.column_stack([r * np.cos(t), r * np.sin(t), np.full(n, z)])


def _lateral_cilindro(rng: np.random.Generator, n: int, raio: float, altura: float) -> np.ndarray:
    t = rng.random(n) * 2 * np.pi
    z = (rng.random(n) - 0.5) * altura
    return np.column_stack([raio * np.cos(t), raio * np.sin(t), z])


def _cilindro(rng: np.random.Generator, n: int, raio: float, altura: float,
              tampas: bool = True) -> np.ndarray:
    if not tampas:
        return _lateral_cilindro(rng, n, raio, altura)
    area_lateral = 2 * np.pi * raio * altura
    area_tampa = np.pi * raio ** 2
    p = np.array([area_lateral, area_tampa, area_tampa])
    contagem = rng.multinomial(n, p / p.sum())
    return np.vstack([_lateral_cilindro(rng, contagem[0], raio, altura),
                      _disco(rng, contagem[1], raio, altura / 2),
                      _disco(rng, contagem[2], raio, -altura / 2)])


def _tronco_cone(rng: np.random.Generator, n: int, raio_base: float, raio_topo: float,
                 altura: float) -> np.ndarray:
    """Lateral de tronco de cone (raio_topo = 0 dá um cone) mais as tampas"""
    geratriz = math.hypot(altura, raio_base - raio_topo)
    area_lateral = np.pi * (raio_base + raio_topo) * geratriz
    p = np.array([area_lateral, np.pi * raio_base ** 2, np.pi * raio_topo ** 2])
    contagem = rng.multinomial(n, p / p.sum())
    # densidade linear no raio ao longo da geratriz
    u = rng.random(contagem[0])
    if abs(raio_base - raio_topo) > 1e-12:
        r2 = raio_topo ** 2 + u * (raio_base ** 2 - raio_topo ** 2)
        r = np.sqrt(r2)
        frac = (raio_base - r) / (raio_base - raio_topo)
    else:
        r = np.full_like(u, raio_base)
        frac = u
    t = rng.random(contagem[0]) * 2 * np.pi
    lateral = np.column_stack([r * np.cos(t), r * np.sin(t), -altura / 2 + frac * altura])
    return np.vstack([lateral,
                      _disco(rng, contagem[1], raio_base, -altura / 2),
                      _disco(rng, contagem[2], raio_topo, altura / 2)])


def _triangulo(rng: np.random.Generator, n: int, a, b, c) -> np.ndarray:
    r1 = np.sqrt(rng.random((n, 1)))
    r2 = rng.random((n, 1))
    return (1 - r1) * np.asarray(a) + r1 * (1 - r2) * np.asarray(b) + r1 * r2 * np.asarray(c)


def _piramide(rng: np.random.Generator, n: int, lado: float, altura: float) -> np.ndarray:
    h = lado / 2
    base = [(-h, -h, -altura / 2), (h, -h, -altura / 2), (h, h, -altura / 2), (-h, h, -altura / 2)]
    apice = (0.0, 0.0, altura / 2)
    contagem = rng.multinomial(n, [0.2] * 5)
    partes = [_triangulo(rng, contagem[i], base[i], base[(i + 1) % 4], apice) for i in range(4)]
    partes.append(_superficie_caixa(rng, contagem[4], (lado, lado, 0.0), (0, 0, -altura / 2)))
    return np.vstack(partes)


def _hemisferio(rng: np.random.Generator, n: int) -> np.ndarray:
    n_disco = n // 3
    calota = _superficie_elipsoide(rng, n - n_disco, (1.0, 1.0, 1.0))
    calota[:, 2] = np.abs(calota[:, 2])
    return np.vstack([calota, _disco(rng, n_disco, 1.0, 0.0)])


def _toro(rng: np.random.Generator, n: int, raio_maior: float, raio_menor: float) -> np.ndarray:
    theta = rng.random(n) * 2 * np.pi
    phi = rng.random(n) * 2 * np.pi
    anel = raio_maior + raio_menor * np.cos(phi)
    return np.column_stack([anel * np.cos(theta), anel * np.sin(theta), raio_menor * np.sin(phi)])


def _helice(rng: np.random.Generator, n: int) -> np.ndarray:
    t = rng.random(n) * 4 * np.pi
    eixo = np.column_stack([np.cos(t), np.sin(t), t / (4 * np.pi) * 1.5 - 0.75])
    return eixo + 0.08 * _direcoes(rng, n)


def _halter(rng: np.random.Generator, n: int) -> np.ndarray:
    c = rng.multinomial(n, [0.4, 0.4, 0.2])
    haste = _lateral_cilindro(rng, c[2], 0.08, 1.4)[:, [2, 1, 0]]
    return np.vstack([_superficie_elipsoide(rng, c[0], (0.35,) * 3, (0.7, 0, 0)),
                      _superficie_elipsoide(rng, c[1], (0.35,) * 3, (-0.7, 0, 0)),
                      haste])


def _mesa(rng: np.random.Generator, n: int) -> np.ndarray:
    c = rng.multinomial(n, [0.5, 0.125, 0.125, 0.125, 0.125])
    partes = [_superficie_caixa(rng, c[0], (1.2, 0.8, 0.08), (0, 0, 0.5))]
    for k, (x, y) in enumerate([(0.55, 0.35), (-0.55, 0.35), (0.55, -0.35), (-0.55, -0.35)]):
        partes.append(_superficie_caixa(rng, c[k + 1], (0.08, 0.08, 1.0), (x, y, 0.0)))
    return np.vstack(partes)


def _perfil_l(rng: np.random.Generator, n: int) -> np.ndarray:
    c = rng.multinomial(n, [0.5, 0.5])
    return np.vstack([_superficie_caixa(rng, c[0], (1.2, 0.3, 0.3), (0.0, 0.0, -0.35)),
                      _superficie_caixa(rng, c[1], (0.3, 0.3, 1.0), (-0.45, 0.0, 0.3))])


class FamiliaForma(NamedTuple):
    """Família paramétrica de uma subcategoria"""
    sub: str
    gerador: Callable[[np.random.Generator, int], np.ndarray]
    descricao: str


# Catálogo: 6 categorias pai x 3 subcategorias
CATALOGO_FORMAS: Dict[str, Tuple[FamiliaForma, ...]] = {
    "box": (
        FamiliaForma("cube", lambda r, n: _superficie_caixa(r, n, (1.0, 1.0, 1.0)),
                     "a solid cube with six equal square faces"),
        FamiliaForma("slab", lambda r, n: _superficie_caixa(r, n, (1.0, 1.0, 0.25)),
                     "a flat square slab that is wide and thin"),
        FamiliaForma("rod", lambda r, n: _superficie_caixa(r, n, (0.25, 0.25, 1.2)),
                     "a tall square rod standing upright"),
    ),
    "sphere": (
        FamiliaForma("ball", lambda r, n: _superficie_elipsoide(r, n, (1.0, 1.0, 1.0)),
                     "a round ball with a smooth surface"),
        FamiliaForma("ellipsoid", lambda r, n: _superficie_elipsoide(r, n, (1.0, 0.6, 0.4)),
                     "a stretched ellipsoid like a squashed egg"),
        FamiliaForma("hemisphere", lambda r, n: _hemisferio(r, n),
                     "a half sphere resting on its flat side"),
    ),
    "cylinder": (
        FamiliaForma("can", lambda r, n: _cilindro(r, n, 0.5, 1.0),
                     "a closed can shaped cylinder"),
        FamiliaForma("disk", lambda r, n: _cilindro(r, n, 1.0, 0.15),
                     "a thin round disk like a coin"),
        FamiliaForma("tube", lambda r, n: _cilindro(r, n, 0.35, 1.5, tampas=False),
                     "a long open tube without caps"),
    ),
    "cone": (
        FamiliaForma("cone", lambda r, n: _tronco_cone(r, n, 0.6, 0.0, 1.2),
                     "a pointed cone with a round base"),
        FamiliaForma("pyramid", lambda r, n: _piramide(r, n, 1.0, 1.0),
                     "a pyramid with a square base and four triangles"),
        FamiliaForma("frustum", lambda r, n: _tronco_cone(r, n, 0.7, 0.3, 0.8),
                     "a cone with its tip cut off flat"),
    ),
    "torus": (
        FamiliaForma("ring", lambda r, n: _toro(r, n, 1.0, 0.1),
                     "a thin ring like a hoop"),
        FamiliaForma("donut", lambda r, n: _toro(r, n, 0.8, 0.45),
                     "a thick donut with a small hole"),
        FamiliaForma("helix", _helice, "a coiled helix like a spring"),
    ),
    "composite": (
        FamiliaForma("dumbbell", _halter, "a dumbbell with two balls on a bar"),
        FamiliaForma("table", _mesa, "a table with a flat top on four legs"),
        FamiliaForma("lshape", _perfil_l, "an l shaped bracket of two bars"),
    ),
}


def descricao_subcategoria(sub: str) -> str:
    """Descrição textual curta de uma subcategoria do catálogo"""
    for familias in CATALOGO_FORMAS.values():
        for familia in familias:
            if familia.sub == sub:
                return familia.descricao
    raise KeyError(f"Subcategoria fora do catálogo: {sub!r}")


# ====================== CORPUS SINTÉTICO ======================

@dataclass(frozen=True)
class CorpusSpec:
    """Especificação do corpus sintético"""
    parents: int
    subs_per_parent: int
    samples_per_sub: int
    n_points: int
    seed: int

    def __post_init__(self):
        for nome in ("parents", "subs_per_parent", "samples_per_sub"):
            if getattr(self, nome) < 1:
                raise ValueError(f"{nome} deve ser >= 1")
        if self.n_points < 8:
            raise ValueError(f"N_c = {self.n_points} < 8 gera geometria degenerada")
        if self.parents > len(CATALOGO_FORMAS):
            raise ValueError(f"Catálogo tem apenas {len(CATALOGO_FORMAS)} categorias pai")
        maximo_subs = min(len(f) for f in CATALOGO_FORMAS.values())
        if self.subs_per_parent > maximo_subs:
            raise ValueError(f"Catálogo tem apenas {maximo_subs} subcategorias por pai")


class AmostraCorpus(NamedTuple):
    cloud: PointCloud
    parent: str
    sub: str


def normalize_cloud(points: np.ndarray) -> np.ndarray:
    """Centraliza na origem e escala para a esfera unitária"""
    pts = np.asarray(points, dtype=np.float64)
    pts = pts - pts.mean(axis=0)
    raio = np.linalg.norm(pts, axis=1).max()
    if raio > 0:
        pts = pts / raio
    # recentraliza e mantém o raio <= 1 após arredondamentos
    pts = pts - pts.mean(axis=0)
    raio = np.linalg.norm(pts, axis=1).max()
    return pts / raio if raio > 1.0 else pts


def generate_synthetic_corpus(spec: CorpusSpec) -> List[AmostraCorpus]:
    """
    Gera o corpus sintético determinístico (substituto de mesa do ShapeNet55).

    Cada subcategoria é uma família paramétrica distinta; cada amostra recebe
    variação de escala por eixo, rotação leve em torno do eixo vertical e ruído.

    Args:
        spec: Especificação do corpus

    Returns:
        Lista de (nuvem, pai, sub) na ordem pai -> sub -> amostra
    """
    corpus: List[AmostraCorpus] = []
    pais = list(CATALOGO_FORMAS)[:spec.parents]
    for i_pai, pai in enumerate(pais):
        for i_sub, familia in enumerate(CATALOGO_FORMAS[pai][:spec.subs_per_parent]):
            for k in range(spec.samples_per_sub):
                rng = np.random.default_rng([spec.seed, i_pai, i_sub, k])
                pts = familia.gerador(rng, spec.n_points)
                pts = pts * rng.uniform(0.9, 1.1, size=3)
                giro = Rotation.from_euler("z", rng.uniform(-15.0, 15.0), degrees=True)
                pts = giro.apply(pts) + rng.normal(scale=0.01, size=pts.shape)
                nuvem = PointCloud(points=normalize_cloud(pts), id=f"{pai}-{familia.sub}-{k:03d}")
                corpus.append(AmostraCorpus(nuvem, pai, familia.sub))
    Logger.debug(f"Corpus sintético: {len(corpus)} amostras")
    return corpus


def sample_points(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    """
    Amostragem uniforme de n pontos (sem reposição se n <= N_c, com reposição caso contrário)
    """
    if n < 1:
        raise ValueError("n deve ser >= 1")
    rng = np.random.default_rng(seed)
    indices = rng.choice(cloud.n_points, size=n, replace=n > cloud.n_points)
    return PointCloud(points=cloud.points[indices], id=cloud.id)


def dividir_corpus(corpus: Sequence[AmostraCorpus], fracao_validacao: float,
                   subs_nao_vistas: Iterable[str] = (), seed: int = 0
                   ) -> Tuple[List[AmostraCorpus], List[AmostraCorpus], List[AmostraCorpus]]:
    """
    Separa treino, validação (por subcategoria) e subcategorias não vistas.

    Returns:
        (treino, validacao, nao_vistas)
    """
    if not (0.0 <= fracao_validacao < 1.0):
        raise ValueError("Fração de validação deve estar em [0, 1)")
    excluidas = set(subs_nao_vistas)
    por_sub: Dict[str, List[AmostraCorpus]] = {}
    for amostra in corpus:
        por_sub.setdefault(amostra.sub, []).append(amostra)
    desconhecidas = excluidas - set(por_sub)
    if desconhecidas:
        raise ValueError(f"Subcategorias não vistas ausentes do corpus: {sorted(desconhecidas)}")
    treino, validacao, nao_vistas = [], [], []
    for i, (sub, amostras) in enumerate(por_sub.items()):
        if sub in excluidas:
            nao_vistas.extend(amostras)
            continue
        ordem = np.random.default_rng([seed, i]).permutation(len(amostras))
        n_val = int(round(fracao_validacao * len(amostras)))
        if n_val >= len(amostras):
            n_val = len(amostras) - 1
        escolhidas = set(ordem[:n_val].tolist())
        for j, amostra in enumerate(amostras):
            (validacao if j in escolhidas else treino).append(amostra)
    return treino, validacao, nao_vistas


# ====================== RENDERIZAÇÃO DE VISTAS ======================

def _cor_por_altura(z: np.ndarray) -> np.ndarray:
    """RGB codificado pela altura normalizada h = (z + 1) / 2"""
    h = np.clip((z + 1.0) / 2.0, 0.0, 1.0)
    return np.column_stack([h, 1.0 - np.abs(2.0 * h - 1.0), 1.0 - h])


def render_view(cloud: PointCloud, angle_index: int, H: int, W: int) -> ViewImage:
    """
    Projeção ortográfica de splats de pontos em um azimute.

    A câmera fica na direção (cos θ, sin θ, 0) olhando para a origem; o eixo
    horizontal da imagem é (-sin θ, cos θ, 0) e o vertical é z. A profundidade
    é a distância ao longo do eixo de visada, deslocada para que o ponto mais
    próximo valha PROFUNDIDADE_MINIMA. Em cada pixel vence o ponto mais próximo.
    """
    if H < 8 or W < 8:
        raise ValueError("H e W devem ser >= 8")
    theta = Configuracao.angulo_da_vista(angle_index)
    # gira o mundo de -θ: a direção de visada vira +x e o eixo horizontal vira +y
    pts = Rotation.from_euler("z", -theta, degrees=True).apply(cloud.points)
    frente = pts[:, 0]
    profundidade = frente.max() - frente + Configuracao.PROFUNDIDADE_MINIMA
    col = np.clip(np.floor((pts[:, 1] + 1.0) / 2.0 * W), 0, W - 1).astype(np.int64)
    lin = np.clip(np.floor((1.0 - pts[:, 2]) / 2.0 * H), 0, H - 1).astype(np.int64)
    pixel = lin * W + col

    ordem = np.lexsort((profundidade, pixel))
    pixels_unicos, primeiro = np.unique(pixel[ordem], return_index=True)
    vencedores = ordem[primeiro]

    depth = np.zeros(H * W)
    depth[pixels_unicos] = profundidade[vencedores]
    rgb = np.zeros((H * W, 3))
    rgb[pixels_unicos] = _cor_por_altura(cloud.points[vencedores, 2])
    return ViewImage(rgb=rgb.reshape(H, W, 3), depth=depth.reshape(H, W),
                     angle_index=angle_index, angle_deg=theta, source_id=cloud.id)


def render_candidate_views(cloud: PointCloud, H: int, W: int) -> CandidateViewSet:
    """As 30 vistas candidatas a 0°, 12°, ..., 348° (função pura de (nuvem, H, W))"""
    return CandidateViewSet(views=tuple(render_view(cloud, k, H, W)
                                        for k in range(Configuracao.NUM_VISTAS_CANDIDATAS)))


def renderizar_corpus(corpus: Sequence[AmostraCorpus], H: int, W: int,
                      workers: int = 1) -> Dict[str, CandidateViewSet]:
    """Renderiza as vistas candidatas de todo o corpus (em paralelo por nuvem)"""
    nuvens = [a.cloud for a in corpus]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        resultados = list(tqdm(executor.map(lambda c: render_candidate_views(c, H, W), nuvens),
                               total=len(nuvens), desc="Renderizando vistas",
                               disable=not barra_progresso_ativa()))
    return {c.id: r for c, r in zip(nuvens, resultados)}


def profundidade_maxima(candidatos: Iterable[CandidateViewSet]) -> float:
    """Maior profundidade média entre as vistas candidatas (limite superior das faixas)"""
    maximo = max((v.mean_depth for cands in candidatos for v in cands.views), default=0.0)
    if maximo <= 0:
        raise ValueError("Nenhuma vista ocupada para definir a profundidade máxima")
    return maximo


# ====================== AMOSTRAGEM DE VISTAS ======================

def capacidade_janela(omega_deg: float) -> int:
    """Número máximo de slots distintos cabendo em uma janela aberta de largura ω"""
    n = Configuracao.NUM_VISTAS_CANDIDATAS
    if omega_deg <= 0:
        return 0
    if omega_deg > 180.0:
        return n
    return min(n, math.ceil(omega_deg / Configuracao.PASSO_ANGULAR_GRAUS))


def verificar_viabilidade(v: int, omega_deg: float) -> int:
    """Valida (v, ω) e devolve quantos slots a janela comporta"""
    n = Configuracao.NUM_VISTAS_CANDIDATAS
    if not (1 <= v <= n):
        raise ValueError(f"v deve estar em [1, {n}], recebido {v}")
    capacidade = capacidade_janela(omega_deg)
    if v == 1:
        return max(capacidade, 1)
    if v > capacidade:
        raise AmostragemInviavelError(
            f"Amostragem inviável: v={v} vistas distintas não cabem em janela aberta de "
            f"omega={omega_deg}° (máximo {capacidade} com passo de 12°)")
    return capacidade


def within_view_sample(cands: CandidateViewSet, v: int, omega_deg: float,
                       seed: int) -> List[ViewImage]:
    """
    Amostragem dentro de uma janela angular.

    Escolhe um início de janela uniforme no círculo de 30 slots e, dentro da
    janela aberta de largura ω, v slots distintos uniformemente.

    Raises:
        AmostragemInviavelError: se v vistas distintas não cabem na janela
    """
    n = Configuracao.NUM_VISTAS_CANDIDATAS
    capacidade = verificar_viabilidade(v, omega_deg)
    rng = np.random.default_rng(seed)
    inicio = int(rng.integers(n))
    deslocamentos = np.sort(rng.choice(capacidade, size=v, replace=False))
    return [cands[(inicio + int(d)) % n] for d in deslocamentos]


def random_view_sample(cands: CandidateViewSet, v: int, seed: int) -> List[ViewImage]:
    """v vistas distintas sorteadas entre as 30, sem janela angular"""
    n = Configuracao.NUM_VISTAS_CANDIDATAS
    if not (1 <= v <= n):
        raise ValueError(f"v deve estar em [1, {n}], recebido {v}")
    rng = np.random.default_rng(seed)
    return [cands[int(i)] for i in np.sort(rng.choice(n, size=v, replace=False))]


# ====================== ÁRVORE HIERÁRQUICA DE TEXTO ======================

def build_category_tree(pairs: Iterable[Tuple[str, Optional[str]]]) -> CategoryTree:
    """
    Constrói a árvore de categorias a partir de pares (pai, sub).

    Subcategoria ausente é substituída pelo nome do pai; códigos seguem a
    ordem da primeira ocorrência; pares repetidos são idempotentes.
    """
    pais: List[str] = []
    filhos: Dict[str, List[str]] = {}
    dono: Dict[str, str] = {}
    for pai, sub in pairs:
        if not pai:
            raise ValueError("Nome de categoria pai não pode ser vazio")
        sub = sub if sub else pai
        if sub in dono and dono[sub] != pai:
            raise ValueError(f"Subcategoria {sub!r} aparece sob dois pais: "
                             f"{dono[sub]!r} e {pai!r}")
        if pai not in filhos:
            pais.append(pai)
            filhos[pai] = []
        if sub not in dono:
            dono[sub] = pai
            filhos[pai].append(sub)
    return CategoryTree(parents=tuple(pais), children={p: tuple(c) for p, c in filhos.items()})


def assemble_triplets(corpus: Sequence[AmostraCorpus], tree: CategoryTree, v: int,
                      omega_deg: float, seed: int, H: int = 32, W: int = 32,
                      candidatos: Optional[Mapping[str, CandidateViewSet]] = None,
                      modo_amostragem: str = "within") -> List[TripletSample]:
    """
    Monta uma tripla (nuvem, vistas, [pai, sub]) por entrada do corpus.

    Uma nova seleção de vistas por época é obtida chamando com outra semente.

    Args:
        corpus: Entradas (nuvem, pai, sub)
        tree: Árvore de categorias
        v: Vistas por amostra
        omega_deg: Largura da janela angular
        seed: Semente da seleção de vistas
        H, W: Resolução de renderização (se candidatos não for fornecido)
        candidatos: Cache id -> vistas candidatas
        modo_amostragem: 'within' (janela) ou 'random'
    """
    if not corpus:
        raise ValueError("Corpus vazio")
    if modo_amostragem not in ("within", "random"):
        raise ValueError(f"Modo de amostragem inválido: {modo_amostragem!r}")
    if modo_amostragem == "within":
        verificar_viabilidade(v, omega_deg)
    triplas = []
    for i, amostra in enumerate(corpus):
        cands = candidatos[amostra.cloud.id] if candidatos is not None \
            else render_candidate_views(amostra.cloud, H, W)
        semente = derivar_semente(seed, i)
        if modo_amostragem == "within":
            vistas = within_view_sample(cands, v, omega_deg, semente)
        else:
            vistas = random_view_sample(cands, v, semente)
        tripla = TripletSample(cloud=amostra.cloud, views=tuple(vistas),
                               parent=amostra.parent, sub=amostra.sub)
        tripla.validar(tree, omega_deg if modo_amostragem == "within" else None)
        triplas.append(tripla)
    return triplas


def pares_do_corpus(corpus: Iterable[AmostraCorpus]) -> List[Tuple[str, str]]:
    return [(a.parent, a.sub) for a in corpus]
